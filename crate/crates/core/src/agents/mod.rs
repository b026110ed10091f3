//! Learning agents and the mechanisms that wrap them.
//!
//! Two base learners are provided: a double DQN ([`dqn::DqnAgent`]) and a
//! successor-feature agent ([`sf::SfAgent`]). Either can be combined with a
//! consolidation chain, online EWC, plasticity injection on the last layer
//! or continual backprop. Every mechanism draws from its own random stream,
//! so a mechanism whose knob is switched off leaves the run bit-identical to
//! the base agent.

pub mod cbp;
pub mod dqn;
pub mod ewc;
pub mod head;
pub mod injection;
pub mod replay;
pub mod sf;
mod update;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::consolidation::ChainConfig;
use crate::error::{Error, Result};
use crate::gridworld::Action;
use crate::nn::argmax;

pub use cbp::{CbpConfig, CbpState};
pub use dqn::DqnAgent;
pub use ewc::{EwcConfig, EwcState};
pub use head::Head;
pub use injection::{PInjectState, PLastConfig};
pub use replay::ReplayBuffer;
pub use sf::SfAgent;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Arc<[f64]>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Arc<[f64]>,
    /// Goal reached; masks the bootstrap term. Episodes cut by the step cap
    /// are not terminal.
    pub terminal: bool,
}

/// `target <- (1 - tau) * target + tau * online`.
pub fn polyak(target: &mut [f64], online: &[f64], tau: f64) {
    for (t, o) in target.iter_mut().zip(online) {
        *t += tau * (o - *t);
    }
}

/// Greedy action with probability `1 - epsilon`, otherwise uniform. Ties go
/// to the lowest action index.
pub fn act_epsilon_greedy(q: &[f64], epsilon: f64, rng: &mut impl Rng) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        rng.random_range(0..q.len())
    } else {
        argmax(q)
    }
}

/// Linear decay from 1 to `floor` over the first `decay_steps` steps.
pub fn epsilon_at(step: u64, decay_steps: u64, floor: f64) -> f64 {
    if decay_steps == 0 || step >= decay_steps {
        return floor;
    }
    1.0 - (1.0 - floor) * step as f64 / decay_steps as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    Dqn,
    Sf,
}

/// Hyperparameters shared by both learners.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub kind: AgentKind,
    pub gamma: f64,
    pub lr: f64,
    /// Learning rate of the reward weights `w` (SF agents only). Kept small:
    /// Adam moves every coordinate by about this much per update even on
    /// noise, and `Q = psi . w` inherits the jitter.
    pub w_lr: f64,
    pub hidden: usize,
    /// Basis-feature / successor-feature dimension (SF agents only).
    pub sf_dim: usize,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub min_replay: usize,
    pub tau: f64,
    /// Hard target sync period, in updates.
    pub target_period: u64,
    /// Fraction of the run over which epsilon decays.
    pub epsilon_decay_fraction: f64,
    pub epsilon_floor: f64,
    /// Add the cross-attention readout over consolidation variables.
    pub attention: bool,
    pub attention_lr: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            kind: AgentKind::Sf,
            gamma: 0.99,
            lr: 1e-3,
            w_lr: 1e-5,
            hidden: 64,
            sf_dim: 10,
            batch_size: 32,
            replay_capacity: 50_000,
            min_replay: 1_000,
            tau: 0.01,
            target_period: 1_000,
            epsilon_decay_fraction: 0.1,
            epsilon_floor: 0.05,
            attention: false,
            attention_lr: 1e-3,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if !(0.0..1.0).contains(&self.gamma) && self.gamma != 1.0 {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.lr > 0.0 && self.w_lr > 0.0 && self.attention_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.hidden == 0 || self.batch_size == 0 {
            return bad("hidden width and batch size must be positive");
        }
        if self.sf_dim < 2 {
            return bad("sf_dim must be at least 2");
        }
        if self.replay_capacity < self.batch_size || self.min_replay > self.replay_capacity {
            return bad("replay capacity must hold at least one batch and the minimum fill");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon_decay_fraction) || !(0.0..=1.0).contains(&self.epsilon_floor) {
            return bad("epsilon schedule values must lie in [0, 1]");
        }
        if self.attention && self.kind != AgentKind::Sf {
            return bad("the attention readout needs an SF agent");
        }
        Ok(())
    }
}

/// Everything that can wrap a base learner.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mechanisms {
    /// `None` or `k = 0` disables consolidation.
    pub chain: Option<ChainConfig>,
    pub ewc: Option<EwcConfig>,
    /// Global step at which plasticity is injected into the last layer.
    pub p_last_step: Option<u64>,
    pub cbp: Option<CbpConfig>,
}

impl Mechanisms {
    pub fn active_chain(&self) -> Option<&ChainConfig> {
        self.chain.as_ref().filter(|c| c.k > 0)
    }
}

/// Summary of one gradient update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrainStats {
    pub loss: f64,
    pub reward_loss: f64,
    pub resets: usize,
}

pub trait Agent {
    fn num_actions(&self) -> usize {
        Action::COUNT
    }

    /// Action values used for acting.
    fn q_values(&self, obs: &[f64]) -> Vec<f64>;

    /// One gradient update on `batch`. `step` is the global environment step.
    fn train(&mut self, batch: &[&Transition], step: u64) -> Result<TrainStats>;

    /// Called once per environment step before acting.
    fn on_step(&mut self, _step: u64) -> Result<()> {
        Ok(())
    }

    /// Mean attention probabilities over slow variables since the last call.
    fn take_attention(&mut self) -> Option<Vec<f64>> {
        None
    }

    /// All trainable network parameters, flattened (for determinism checks).
    fn parameters(&self) -> Vec<f64>;
}

/// Builds an agent for an environment with `obs_dim` inputs.
pub fn build_agent(cfg: &AgentConfig, mech: &Mechanisms, obs_dim: usize, seed: u64) -> Result<Box<dyn Agent>> {
    cfg.validate()?;
    if let Some(chain) = mech.active_chain() {
        chain.validate()?;
    }
    Ok(match cfg.kind {
        AgentKind::Dqn => Box::new(DqnAgent::new(cfg, mech, obs_dim, seed)?),
        AgentKind::Sf => Box::new(SfAgent::new(cfg, mech, obs_dim, seed)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn greedy_picks_argmax_and_lowest_tie() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(act_epsilon_greedy(&[1.0, 3.0, 2.0, 0.0], 0.0, &mut rng), 1);
        assert_eq!(act_epsilon_greedy(&[0.5; 4], 0.0, &mut rng), 0);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[act_epsilon_greedy(&[0.0, 1.0, 0.0, 0.0], 1.0, &mut rng)] += 1;
        }
        let expected = n as f64 / 4.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 3 degrees of freedom, 99.9% quantile
        assert!(chi2 < 16.27, "chi2={chi2} counts={counts:?}");
    }

    #[test]
    fn polyak_with_unit_tau_copies() {
        let mut t = vec![1.0, 2.0];
        polyak(&mut t, &[3.0, -1.0], 1.0);
        assert_eq!(t, vec![3.0, -1.0]);
        polyak(&mut t, &[5.0, 1.0], 0.5);
        assert_eq!(t, vec![4.0, 0.0]);
    }

    #[test]
    fn epsilon_schedule() {
        assert_eq!(epsilon_at(0, 100, 0.05), 1.0);
        assert!((epsilon_at(50, 100, 0.05) - 0.525).abs() < 1e-12);
        assert_eq!(epsilon_at(100, 100, 0.05), 0.05);
        assert_eq!(epsilon_at(7, 0, 0.05), 0.05);
    }
}
