//! Double DQN with Polyak-averaged and periodically hard-synced targets.

use crate::error::Result;
use crate::gridworld::Action;
use crate::nn::{argmax, Mlp, MlpBuilder};
use crate::rng::{stream, Stream};

use super::head::Head;
use super::injection::PInjectState;
use super::update::Learner;
use super::{polyak, Agent, AgentConfig, Mechanisms, TrainStats, Transition};

#[derive(Clone, Debug)]
pub struct DqnAgent {
    cfg: AgentConfig,
    online: Head,
    target: Head,
    learner: Learner,
}

/// `obs -> hidden ReLU -> hidden ReLU -> |A|`.
pub fn q_network(obs_dim: usize, hidden: usize, rng: &mut impl rand::Rng) -> Mlp {
    MlpBuilder::new(obs_dim)
        .linear(hidden)
        .relu()
        .linear(hidden)
        .relu()
        .linear(Action::COUNT)
        .build(rng)
}

impl DqnAgent {
    pub fn new(cfg: &AgentConfig, mech: &Mechanisms, obs_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, Stream::Init);
        let mut online = Head::new(q_network(obs_dim, cfg.hidden, &mut rng));
        online.plast = mech.p_last_step.map(PInjectState::scheduled);
        let learner = Learner::new(online.mlp.params(), cfg.lr, mech, Some((&online.mlp, 0)), seed)?;
        Ok(Self {
            cfg: cfg.clone(),
            target: online.clone(),
            online,
            learner,
        })
    }

    pub fn online(&self) -> &Head {
        &self.online
    }

    pub(crate) fn online_mut(&mut self) -> &mut Head {
        &mut self.online
    }

    pub fn target(&self) -> &Head {
        &self.target
    }

    pub fn updates(&self) -> u64 {
        self.learner.updates
    }

    /// Double-Q target `r + gamma * Q_target(s', argmax_a Q_online(s', a))`,
    /// with the bootstrap masked on terminal transitions.
    pub fn td_target(&self, t: &Transition) -> f64 {
        if t.terminal {
            return t.reward;
        }
        let a = argmax(&self.online.predict(&t.next_obs));
        t.reward + self.cfg.gamma * self.target.predict(&t.next_obs)[a]
    }

    /// Mean of `0.5 * (y - Q(s, a))^2` and its gradient (network and fresh
    /// injected layer) for fixed targets `ys`.
    pub fn loss_grads(&mut self, batch: &[&Transition], ys: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let b = batch.len() as f64;
        let mut grads = vec![0.0; self.online.mlp.num_params()];
        let mut fresh = vec![0.0; self.online.fresh_len()];
        let mut loss = 0.0;
        let mut up = vec![0.0; Action::COUNT];
        for (t, y) in batch.iter().zip(ys) {
            let (q, cache) = self.online.forward(&t.obs)?;
            let delta = q[t.action] - y;
            loss += 0.5 * delta * delta / b;
            up.iter_mut().for_each(|u| *u = 0.0);
            up[t.action] = delta / b;
            self.online.backward_into(&cache, &up, &mut grads, &mut fresh, false)?;
            if let Some(cbp) = &mut self.learner.cbp {
                cbp.record(&cache.acts);
            }
        }
        Ok((loss, grads, fresh))
    }

    /// Loss only, at the current parameters.
    pub fn loss(&self, batch: &[&Transition], ys: &[f64]) -> f64 {
        let b = batch.len() as f64;
        batch
            .iter()
            .zip(ys)
            .map(|(t, y)| {
                let d = self.online.predict(&t.obs)[t.action] - y;
                0.5 * d * d / b
            })
            .sum()
    }

    pub fn set_parameters(&mut self, theta: &[f64]) -> Result<()> {
        self.online.mlp.set_params(theta)
    }

    fn update_target(&mut self) {
        let tau = self.cfg.tau;
        polyak(self.target.mlp.params_mut(), self.online.mlp.params(), tau);
        if let (Some(t), Some(o)) = (&mut self.target.plast, &self.online.plast) {
            t.track(o, tau);
        }
        if self.learner.updates.is_multiple_of(self.cfg.target_period.max(1)) {
            self.target = self.online.clone();
        }
    }
}

impl Agent for DqnAgent {
    fn q_values(&self, obs: &[f64]) -> Vec<f64> {
        self.online.predict(obs)
    }

    fn train(&mut self, batch: &[&Transition], _step: u64) -> Result<TrainStats> {
        let ys: Vec<f64> = batch.iter().map(|t| self.td_target(t)).collect();
        let (loss, mut grads, fresh) = self.loss_grads(batch, &ys)?;
        let mut theta = self.online.mlp.params().to_vec();
        let plast = self.online.plast.as_mut().map(|p| (p, 0));
        let resets = self.learner.apply(&mut theta, &mut grads, plast, &fresh)?;
        self.online.mlp.set_params(&theta)?;
        self.update_target();
        Ok(TrainStats {
            loss,
            reward_loss: 0.0,
            resets,
        })
    }

    fn on_step(&mut self, step: u64) -> Result<()> {
        let due = self.online.plast.as_ref().is_some_and(|p| !p.injected && step >= p.inject_step);
        if due {
            self.online.inject(step, &mut self.learner.mech_rng)?;
            self.target.plast = self.online.plast.clone();
        }
        Ok(())
    }

    fn parameters(&self) -> Vec<f64> {
        let mut p = self.online.mlp.params().to_vec();
        if let Some(plast) = &self.online.plast {
            p.extend_from_slice(plast.fresh());
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn transition(obs_dim: usize, pos: usize, next: usize, reward: f64, terminal: bool) -> Transition {
        let mut o = vec![0.0; obs_dim];
        o[pos] = 1.0;
        let mut n = vec![0.0; obs_dim];
        n[next] = 1.0;
        Transition {
            obs: Arc::from(o),
            action: pos % 4,
            reward,
            next_obs: Arc::from(n),
            terminal,
        }
    }

    fn agent(cfg: AgentConfig) -> DqnAgent {
        DqnAgent::new(&cfg, &Mechanisms::default(), 6, 7).unwrap()
    }

    fn dqn_cfg() -> AgentConfig {
        AgentConfig {
            kind: super::super::AgentKind::Dqn,
            hidden: 8,
            ..AgentConfig::default()
        }
    }

    #[test]
    fn terminal_targets_equal_rewards() {
        let a = agent(dqn_cfg());
        for r in [-1.0, 0.0, 1.0] {
            assert_eq!(a.td_target(&transition(6, 1, 2, r, true)), r);
        }
    }

    #[test]
    fn zero_gamma_target_is_reward() {
        let a = agent(AgentConfig { gamma: 0.0, ..dqn_cfg() });
        assert_eq!(a.td_target(&transition(6, 1, 2, 0.5, false)), 0.5);
    }

    #[test]
    fn unit_tau_target_tracks_online() {
        let mut a = agent(AgentConfig { tau: 1.0, ..dqn_cfg() });
        let ts: Vec<Transition> = (0..6).map(|i| transition(6, i, (i + 1) % 6, 1.0, i == 5)).collect();
        let batch: Vec<&Transition> = ts.iter().collect();
        a.train(&batch, 0).unwrap();
        assert_eq!(a.target.mlp.params(), a.online.mlp.params());
    }

    #[test]
    fn fixed_seed_runs_are_identical() {
        let ts: Vec<Transition> = (0..6).map(|i| transition(6, i, (i + 2) % 6, i as f64 * 0.1, i == 3)).collect();
        let batch: Vec<&Transition> = ts.iter().collect();
        let mut a = agent(dqn_cfg());
        let mut b = agent(dqn_cfg());
        for step in 0..20 {
            a.train(&batch, step).unwrap();
            b.train(&batch, step).unwrap();
            assert_eq!(a.parameters(), b.parameters());
        }
    }

    #[test]
    fn training_reduces_loss() {
        let ts: Vec<Transition> = (0..6).map(|i| transition(6, i, i, if i == 2 { 1.0 } else { 0.0 }, true)).collect();
        let batch: Vec<&Transition> = ts.iter().collect();
        let mut a = agent(dqn_cfg());
        let ys: Vec<f64> = ts.iter().map(|t| t.reward).collect();
        let before = a.loss(&batch, &ys);
        for step in 0..300 {
            a.train(&batch, step).unwrap();
        }
        assert!(a.loss(&batch, &ys) < 0.1 * before);
    }

    #[test]
    fn injection_keeps_q_values() {
        let mech = Mechanisms {
            p_last_step: Some(5),
            ..Mechanisms::default()
        };
        let mut a = DqnAgent::new(&dqn_cfg(), &mech, 6, 1).unwrap();
        let obs = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let before = a.q_values(&obs);
        a.on_step(4).unwrap();
        assert!(!a.online.injected());
        a.on_step(5).unwrap();
        assert!(a.online.injected());
        assert_eq!(a.q_values(&obs), before);
        assert_eq!(a.target.predict(&obs), a.target.mlp.predict(&obs));
    }

    #[test]
    fn injected_last_layer_stays_frozen() {
        let mech = Mechanisms {
            p_last_step: Some(0),
            ..Mechanisms::default()
        };
        let mut a = DqnAgent::new(&dqn_cfg(), &mech, 6, 1).unwrap();
        a.on_step(0).unwrap();
        let slot = a.online.mlp.last_linear();
        let frozen = a.online.mlp.params()[slot.param_range()].to_vec();
        let twin = a.online.plast.as_ref().unwrap().twin().to_vec();
        let ts: Vec<Transition> = (0..6).map(|i| transition(6, i, i, 1.0, true)).collect();
        let batch: Vec<&Transition> = ts.iter().collect();
        for step in 0..20 {
            a.train(&batch, step).unwrap();
        }
        let p = a.online.plast.as_ref().unwrap();
        assert_eq!(&a.online.mlp.params()[slot.param_range()], frozen.as_slice());
        assert_eq!(p.twin(), twin.as_slice());
        assert_ne!(p.fresh(), twin.as_slice());
    }
}
