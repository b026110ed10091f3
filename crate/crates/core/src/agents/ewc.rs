//! Online elastic weight consolidation.
//!
//! Squared TD-loss gradients are averaged over a window of `interval`
//! updates. At the end of each window the average becomes the Fisher
//! estimate and the current parameters become the anchor, so no task
//! boundaries are needed.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EwcConfig {
    pub lambda: f64,
    /// Refresh period of the Fisher estimate and anchor, in updates.
    pub interval: u64,
}

impl Default for EwcConfig {
    fn default() -> Self {
        Self {
            lambda: 25.0,
            interval: 5_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EwcState {
    pub cfg: EwcConfig,
    pub fisher: Vec<f64>,
    pub anchor: Vec<f64>,
    accum: Vec<f64>,
    count: u64,
}

impl EwcState {
    /// Fisher starts at zero, so there is no penalty before the first refresh.
    pub fn new(cfg: EwcConfig, theta: &[f64]) -> Self {
        let n = theta.len();
        Self {
            cfg,
            fisher: vec![0.0; n],
            anchor: theta.to_vec(),
            accum: vec![0.0; n],
            count: 0,
        }
    }

    /// Adds one squared task gradient to the running window.
    pub fn accumulate(&mut self, task_grad: &[f64]) {
        for (a, g) in self.accum.iter_mut().zip(task_grad) {
            *a += g * g;
        }
        self.count += 1;
    }

    /// Ends the window if `interval` gradients have been accumulated.
    /// Returns whether a refresh happened.
    pub fn maybe_refresh(&mut self, theta: &[f64]) -> bool {
        if self.count < self.cfg.interval.max(1) {
            return false;
        }
        let n = self.count as f64;
        for (f, a) in self.fisher.iter_mut().zip(self.accum.iter_mut()) {
            *f = *a / n;
            *a = 0.0;
        }
        self.anchor.copy_from_slice(theta);
        self.count = 0;
        true
    }

    /// `lambda/2 * sum_i F_i (theta_i - anchor_i)^2`.
    pub fn penalty(&self, theta: &[f64]) -> f64 {
        0.5 * self.cfg.lambda
            * self
                .fisher
                .iter()
                .zip(theta.iter().zip(&self.anchor))
                .map(|(f, (t, a))| f * (t - a) * (t - a))
                .sum::<f64>()
    }
}

/// Gradient of the EWC penalty: `lambda * F_i * (theta_i - anchor_i)`.
pub fn ewc_penalty_grad(state: &EwcState, theta: &[f64]) -> Result<Vec<f64>> {
    check_len(state.anchor.len(), theta.len())?;
    Ok(state
        .fisher
        .iter()
        .zip(theta.iter().zip(&state.anchor))
        .map(|(f, (t, a))| state.cfg.lambda * f * (t - a))
        .collect())
}
