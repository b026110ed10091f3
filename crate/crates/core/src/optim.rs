//! Plain SGD, bias-corrected Adam, and a probe that measures how each
//! optimizer treats gradients that differ only by a constant scale.
//!
//! The consolidation update feeds each variable a gradient scaled by its
//! timescale ratio `kappa = g / C`. SGD moves every variable proportionally
//! to its `kappa`; Adam normalises the scale away, so every variable ends up
//! moving at the same rate.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub alpha: f64,
}

impl SgdConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha.is_finite() && alpha > 0.0 {
            Ok(Self { alpha })
        } else {
            Err(Error::InvalidInput(format!("learning rate must be positive, got {alpha}")))
        }
    }
}

/// `theta - alpha * grad`.
pub fn sgd_step(theta: &[f64], grad: &[f64], cfg: &SgdConfig) -> Result<Vec<f64>> {
    check_len(theta.len(), grad.len())?;
    Ok(theta.iter().zip(grad).map(|(t, g)| t - cfg.alpha * g).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    /// In-place Adam update. Returns the largest absolute displacement.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], alpha: f64) -> Result<f64> {
        check_len(self.m.len(), theta.len())?;
        check_len(theta.len(), grad.len())?;
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let mut largest = 0.0f64;
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let delta = alpha * m_hat / (v_hat.sqrt() + self.eps);
            theta[i] -= delta;
            largest = largest.max(delta.abs());
        }
        Ok(largest)
    }

    /// Forget the moments of the given coordinates (used when units are
    /// re-initialised).
    pub fn reset_coords(&mut self, coords: impl IntoIterator<Item = usize>) {
        for i in coords {
            self.m[i] = 0.0;
            self.v[i] = 0.0;
        }
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(theta: &[f64], grad: &[f64], st: &AdamState, alpha: f64) -> Result<(Vec<f64>, AdamState)> {
    let mut next = st.clone();
    let mut out = theta.to_vec();
    next.step(&mut out, grad, alpha)?;
    Ok((out, next))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeOptimizer {
    Sgd,
    Adam,
}

/// Drives one scalar parameter per `kappa` with the constant gradient
/// `kappa * 1` for `steps` steps (learning rate 1) and returns the size of
/// the final step for each. These are raw displacements; see
/// [`normalize_ratios`].
pub fn timescale_probe(kappas: &[f64], optimizer: ProbeOptimizer, steps: usize) -> Result<Vec<f64>> {
    if kappas.is_empty() {
        return Err(Error::InvalidInput("timescale probe needs at least one kappa".into()));
    }
    if let Some(k) = kappas.iter().find(|k| !(k.is_finite() && **k > 0.0)) {
        return Err(Error::InvalidInput(format!("kappa must be positive, got {k}")));
    }
    if steps < 50 {
        return Err(Error::InvalidInput(format!("probe needs at least 50 steps, got {steps}")));
    }
    let alpha = 1.0;
    let out = kappas
        .iter()
        .map(|&kappa| {
            let grad = [kappa];
            let mut theta = [0.0];
            let mut last = 0.0;
            match optimizer {
                ProbeOptimizer::Sgd => {
                    let cfg = SgdConfig { alpha };
                    for _ in 0..steps {
                        let next = sgd_step(&theta, &grad, &cfg).expect("matching shapes");
                        last = (cfg.alpha * grad[0]).abs();
                        theta[0] = next[0];
                    }
                }
                ProbeOptimizer::Adam => {
                    let mut st = AdamState::new(1);
                    for _ in 0..steps {
                        last = st.step(&mut theta, &grad, alpha).expect("matching shapes");
                    }
                }
            }
            last
        })
        .collect();
    Ok(out)
}

/// Divides every displacement by the smallest one.
pub fn normalize_ratios(displacements: &[f64]) -> Vec<f64> {
    let min = displacements.iter().copied().fold(f64::INFINITY, f64::min);
    displacements.iter().map(|d| d / min).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_examples() {
        let cfg = SgdConfig::new(0.3).unwrap();
        assert_eq!(sgd_step(&[1.0], &[0.0], &cfg).unwrap(), vec![1.0]);
        let half = SgdConfig::new(0.5).unwrap();
        assert_eq!(sgd_step(&[0.0], &[2.0], &half).unwrap(), vec![-1.0]);
        assert!(sgd_step(&[0.0, 1.0], &[2.0], &half).is_err());
        assert!(SgdConfig::new(0.0).is_err());
    }

    #[test]
    fn sgd_preserves_kappa_ratio() {
        let cfg = SgdConfig::new(1.0).unwrap();
        let a = sgd_step(&[0.0], &[0.125], &cfg).unwrap()[0];
        let b = sgd_step(&[0.0], &[0.0625], &cfg).unwrap()[0];
        assert_eq!(a / b, 2.0);
    }

    #[test]
    fn adam_zero_gradient_never_moves() {
        let mut st = AdamState::new(2);
        let mut theta = [0.3, -1.0];
        for _ in 0..100 {
            st.step(&mut theta, &[0.0, 0.0], 1.0).unwrap();
        }
        assert_eq!(theta, [0.3, -1.0]);
    }

    #[test]
    fn adam_constant_gradient_moves_alpha_per_step() {
        for g in [1e-3, 0.5, 40.0] {
            let mut st = AdamState::new(1);
            let mut theta = [0.0];
            let mut last = 0.0;
            for _ in 0..200 {
                last = st.step(&mut theta, &[g], 1.0).unwrap();
            }
            assert!((last - 1.0).abs() < 0.05, "g={g} step={last}");
        }
    }

    #[test]
    fn adam_equalises_scaled_gradients() {
        let d = timescale_probe(&[0.125, 0.0625], ProbeOptimizer::Adam, 200).unwrap();
        let ratio = d[0] / d[1];
        assert!((0.95..=1.05).contains(&ratio), "{ratio}");
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut st = AdamState::new(2);
        assert!(st.step(&mut [0.0, 0.0], &[1.0], 1e-3).is_err());
        assert!(adam_step(&[0.0], &[1.0], &st, 1e-3).is_err());
    }

    #[test]
    fn probe_examples() {
        let sgd = timescale_probe(&[0.125, 0.0625], ProbeOptimizer::Sgd, 100).unwrap();
        assert_eq!(normalize_ratios(&sgd), vec![2.0, 1.0]);
        let adam = timescale_probe(&[0.125, 0.0625], ProbeOptimizer::Adam, 100).unwrap();
        for r in normalize_ratios(&adam) {
            assert!((r - 1.0).abs() < 1e-3);
        }
        let single = timescale_probe(&[0.3], ProbeOptimizer::Adam, 60).unwrap();
        assert_eq!(normalize_ratios(&single), vec![1.0]);
    }

    #[test]
    fn probe_validates_input() {
        assert!(timescale_probe(&[], ProbeOptimizer::Sgd, 100).is_err());
        assert!(timescale_probe(&[0.1], ProbeOptimizer::Sgd, 10).is_err());
        assert!(timescale_probe(&[-0.1], ProbeOptimizer::Sgd, 100).is_err());
    }
}
