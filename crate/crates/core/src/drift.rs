//! Latent drift signals that make the environment continually non-stationary.

use std::f64::consts::{PI, SQRT_2};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest slip probability of the four-rooms environment at full severity.
pub const MAX_SLIP: f64 = 0.45;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftKind {
    PeriodicSine,
    NonPeriodicSine,
    #[serde(rename = "ou")]
    OrnsteinUhlenbeck,
}

/// How much of the maximum perturbation a run is allowed to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Mild,
    Moderate,
    Severe,
}

impl Regime {
    pub fn factor(self) -> f64 {
        match self {
            Regime::Mild => 0.25,
            Regime::Moderate => 0.5,
            Regime::Severe => 1.0,
        }
    }

    pub const ALL: [Regime; 3] = [Regime::Mild, Regime::Moderate, Regime::Severe];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftConfig {
    pub kind: DriftKind,
    /// Unscaled sine amplitude; the effective amplitude is
    /// `amplitude * regime.factor()`.
    pub amplitude: f64,
    /// Sine period in steps.
    pub period: f64,
    /// Standard deviation of the additive Gaussian noise on the sine kinds.
    pub noise_sigma: f64,
    pub ou_theta: f64,
    pub ou_mu: f64,
    pub ou_sigma: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub regime: Regime,
    pub seed: u64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            kind: DriftKind::PeriodicSine,
            amplitude: 1.0,
            period: 1000.0,
            noise_sigma: 0.05,
            ou_theta: 0.01,
            ou_mu: 0.0,
            ou_sigma: 0.05,
            clip_lo: -1.0,
            clip_hi: 1.0,
            regime: Regime::Severe,
            seed: 0,
        }
    }
}

impl DriftConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.clip_lo < self.clip_hi) {
            return bad(format!("drift clip_lo ({}) must be below clip_hi ({})", self.clip_lo, self.clip_hi));
        }
        if !(self.amplitude >= 0.0) {
            return bad(format!("drift amplitude must be non-negative, got {}", self.amplitude));
        }
        if !(self.period > 0.0) {
            return bad(format!("drift period must be positive, got {}", self.period));
        }
        if !(self.noise_sigma >= 0.0 && self.ou_sigma >= 0.0) {
            return bad("drift noise scales must be non-negative".into());
        }
        if !(self.ou_theta > 0.0 && self.ou_theta <= 1.0) {
            return bad(format!("ou_theta must lie in (0, 1], got {}", self.ou_theta));
        }
        Ok(())
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.clip_lo + self.clip_hi)
    }

    pub fn effective_amplitude(&self) -> f64 {
        self.amplitude * self.regime.factor()
    }

    /// A drift that sweeps the slip probability over `slip_range(regime)`.
    pub fn slip(kind: DriftKind, regime: Regime, period: f64, seed: u64) -> Self {
        let (lo, hi) = slip_range(regime);
        let half = 0.5 * MAX_SLIP;
        Self {
            kind,
            amplitude: half,
            period,
            noise_sigma: 0.05 * half * regime.factor(),
            ou_theta: 1e-3,
            ou_mu: 0.5 * (lo + hi),
            ou_sigma: 0.01 * regime.factor(),
            clip_lo: lo,
            clip_hi: hi,
            regime,
            seed,
        }
    }
}

/// Slip-probability bounds for a regime: `(0, 0.45 * factor)`.
pub fn slip_range(regime: Regime) -> (f64, f64) {
    (0.0, MAX_SLIP * regime.factor())
}

#[derive(Clone, Debug)]
pub struct DriftState {
    pub t: u64,
    pub x: f64,
    pub rng: ChaCha8Rng,
}

impl DriftState {
    pub fn new(cfg: &DriftConfig) -> Self {
        let x = match cfg.kind {
            DriftKind::OrnsteinUhlenbeck => cfg.ou_mu,
            _ => cfg.mid(),
        };
        Self {
            t: 0,
            x: x.clamp(cfg.clip_lo, cfg.clip_hi),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        }
    }
}

fn advance(state: &mut DriftState, cfg: &DriftConfig) -> f64 {
    let t = state.t as f64;
    let x = match cfg.kind {
        DriftKind::PeriodicSine => {
            let noise: f64 = StandardNormal.sample(&mut state.rng);
            cfg.mid() + cfg.effective_amplitude() * (2.0 * PI * t / cfg.period).sin() + cfg.noise_sigma * noise
        }
        DriftKind::NonPeriodicSine => {
            let noise: f64 = StandardNormal.sample(&mut state.rng);
            let base = 2.0 * PI * t / cfg.period;
            let wave = 0.5 * (base.sin() + (SQRT_2 * base).sin());
            cfg.mid() + cfg.effective_amplitude() * wave + cfg.noise_sigma * noise
        }
        DriftKind::OrnsteinUhlenbeck => {
            let noise: f64 = StandardNormal.sample(&mut state.rng);
            state.x + cfg.ou_theta * (cfg.ou_mu - state.x) + cfg.ou_sigma * noise
        }
    };
    state.x = x.clamp(cfg.clip_lo, cfg.clip_hi);
    state.t += 1;
    state.x
}

/// Functional single step: returns the emitted value and the advanced state.
pub fn sample_next(state: &DriftState, cfg: &DriftConfig) -> (f64, DriftState) {
    let mut next = state.clone();
    let x = advance(&mut next, cfg);
    (x, next)
}

/// Owning drift generator.
#[derive(Clone, Debug)]
pub struct DriftProcess {
    cfg: DriftConfig,
    state: DriftState,
}

impl DriftProcess {
    pub fn new(cfg: DriftConfig) -> Result<Self> {
        cfg.validate()?;
        let state = DriftState::new(&cfg);
        Ok(Self { cfg, state })
    }

    pub fn sample_next(&mut self) -> f64 {
        advance(&mut self.state, &self.cfg)
    }

    /// Last emitted value (the initial value before the first sample).
    pub fn current(&self) -> f64 {
        self.state.x
    }

    pub fn config(&self) -> &DriftConfig {
        &self.cfg
    }

    pub fn state(&self) -> &DriftState {
        &self.state
    }

    /// The next `n` samples as `(t, value)` pairs.
    pub fn trajectory(&mut self, n: usize) -> Vec<(u64, f64)> {
        (0..n)
            .map(|_| {
                let t = self.state.t;
                (t, self.sample_next())
            })
            .collect()
    }
}
