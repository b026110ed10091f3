//! Successor-feature agent, optionally with a consolidation chain over its
//! encoder and SF-head parameters and a cross-attention readout.
//!
//! - basis features `phi(s) = l2norm(encoder(s))`
//! - successor features `psi(s, ., w) = head([phi(s); w])`, one `n`-slice per action
//! - action values `Q(s, a) = psi(s, a, w) . w`
//!
//! The TD loss trains the encoder and head only. The reward loss
//! `0.5 * (r - phi(s') . w)^2` trains `w` only; `phi` enters it as a constant.

use rand::Rng;

use crate::attention::{attend, attend_backward, AttendCache, AttentionHead};
use crate::error::{Error, Result};
use crate::gridworld::Action;
use crate::nn::{argmax, dot, l2_normalize, l2_normalize_backward, Mlp, MlpBuilder};
use crate::optim::AdamState;
use crate::rng::{stream, Stream};

use super::head::Head;
use super::injection::PInjectState;
use super::update::Learner;
use super::{polyak, Agent, AgentConfig, Mechanisms, TrainStats, Transition};

/// `obs -> hidden -> LayerNorm -> Tanh -> n`.
pub fn sf_encoder(obs_dim: usize, hidden: usize, n: usize, rng: &mut impl Rng) -> Mlp {
    MlpBuilder::new(obs_dim).linear(hidden).layer_norm().tanh().linear(n).build(rng)
}

/// `[phi; w] -> hidden ReLU -> hidden ReLU -> n * |A|`.
pub fn sf_head(hidden: usize, n: usize, rng: &mut impl Rng) -> Mlp {
    MlpBuilder::new(2 * n)
        .linear(hidden)
        .relu()
        .linear(hidden)
        .relu()
        .linear(n * Action::COUNT)
        .build(rng)
}

#[derive(Clone, Debug)]
pub struct SfAgent {
    cfg: AgentConfig,
    n: usize,
    encoder: Mlp,
    head: Head,
    w: Vec<f64>,
    w_adam: AdamState,
    target_encoder: Mlp,
    target_head: Head,
    learner: Learner,
    attention: Option<AttentionHead>,
    attention_sum: Vec<f64>,
    attention_count: usize,
}

/// Per-sample outputs of the TD-loss gradient.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SfGrads {
    pub loss: f64,
    /// Gradient over `[encoder; head]`.
    pub theta: Vec<f64>,
    /// Gradient of the injected fresh layer (empty before injection).
    pub fresh: Vec<f64>,
    /// Gradient of the attention projections (empty without attention).
    pub attention: Vec<f64>,
    /// Attention probabilities summed over the batch.
    pub prob_sum: Vec<f64>,
}

impl SfAgent {
    pub fn new(cfg: &AgentConfig, mech: &Mechanisms, obs_dim: usize, seed: u64) -> Result<Self> {
        let n = cfg.sf_dim;
        let mut rng = stream(seed, Stream::Init);
        let encoder = sf_encoder(obs_dim, cfg.hidden, n, &mut rng);
        let mut head = Head::new(sf_head(cfg.hidden, n, &mut rng));
        head.plast = mech.p_last_step.map(PInjectState::scheduled);
        let bound = 1.0 / (n as f64).sqrt();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        let attention = if cfg.attention {
            let k = mech.active_chain().map_or(0, |c| c.k);
            if k < 2 {
                return Err(Error::Config(format!(
                    "the attention readout needs a chain with at least two variables, got {k}"
                )));
            }
            let mut att_rng = stream(seed, Stream::Attention);
            Some(AttentionHead::new(n, &mut att_rng))
        } else {
            None
        };
        let mut theta = encoder.params().to_vec();
        theta.extend_from_slice(head.mlp.params());
        let learner = Learner::new(&theta, cfg.lr, mech, Some((&head.mlp, encoder.num_params())), seed)?;
        let k = attention.as_ref().map_or(0, |_| mech.active_chain().map_or(0, |c| c.k - 1));
        Ok(Self {
            cfg: cfg.clone(),
            n,
            target_encoder: encoder.clone(),
            target_head: head.clone(),
            encoder,
            head,
            w_adam: AdamState::new(n),
            w,
            learner,
            attention,
            attention_sum: vec![0.0; k],
            attention_count: 0,
        })
    }

    pub fn sf_dim(&self) -> usize {
        self.n
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn set_w(&mut self, w: &[f64]) -> Result<()> {
        crate::error::check_len(self.n, w.len())?;
        self.w.copy_from_slice(w);
        Ok(())
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub(crate) fn head_mut(&mut self) -> &mut Head {
        &mut self.head
    }

    pub fn updates(&self) -> u64 {
        self.learner.updates
    }

    pub fn chain(&self) -> Option<&crate::consolidation::ChainState> {
        self.learner.chain.as_ref().map(|(_, c)| c)
    }

    pub fn attention_head(&self) -> Option<&AttentionHead> {
        self.attention.as_ref()
    }

    pub fn attention_head_mut(&mut self) -> Option<&mut AttentionHead> {
        self.attention.as_mut()
    }

    /// Encoder and head parameters, `[encoder; head]`.
    pub fn theta(&self) -> Vec<f64> {
        let mut t = self.encoder.params().to_vec();
        t.extend_from_slice(self.head.mlp.params());
        t
    }

    pub fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        crate::error::check_len(self.encoder.num_params() + self.head.mlp.num_params(), theta.len())?;
        let (e, h) = theta.split_at(self.encoder.num_params());
        self.encoder.set_params(e)?;
        self.head.mlp.set_params(h)
    }

    /// `phi(s)`, the normalised encoder output.
    pub fn features(&self, obs: &[f64]) -> Vec<f64> {
        l2_normalize(&self.encoder.predict(obs))
    }

    fn head_input(&self, phi: &[f64]) -> Vec<f64> {
        let mut x = phi.to_vec();
        x.extend_from_slice(&self.w);
        x
    }

    /// Successor features of the plastic network for every action.
    pub fn plastic_psi(&self, obs: &[f64]) -> Vec<f64> {
        self.head.predict(&self.head_input(&self.features(obs)))
    }

    /// Successor features of every chain variable (`K` vectors of
    /// `n * |A|`), the first being the plastic network.
    pub fn chain_psi(&self, obs: &[f64]) -> Vec<Vec<f64>> {
        let mut out = vec![self.plastic_psi(obs)];
        if let Some((_, chain)) = &self.learner.chain {
            let e = self.encoder.num_params();
            for var in &chain.vars[1..] {
                let phi = l2_normalize(&self.encoder.predict_with(&var[..e], obs));
                out.push(self.head.mlp.predict_with(&var[e..], &self.head_input(&phi)));
            }
        }
        out
    }

    fn action_slices(&self, all: &[Vec<f64>], a: usize) -> Vec<Vec<f64>> {
        let n = self.n;
        all.iter().map(|p| p[a * n..(a + 1) * n].to_vec()).collect()
    }

    /// Successor features used for acting: the plastic features plus the
    /// attention readout when enabled.
    pub fn psi(&self, obs: &[f64]) -> Vec<f64> {
        let Some(att) = &self.attention else {
            return self.plastic_psi(obs);
        };
        let all = self.chain_psi(obs);
        let mut psi = all[0].clone();
        let n = self.n;
        for a in 0..Action::COUNT {
            let (o, _, _) = attend(att, &self.w, &self.action_slices(&all, a)).expect("chain has two or more variables");
            psi[a * n..(a + 1) * n].iter_mut().zip(&o).for_each(|(p, x)| *p += x);
        }
        psi
    }

    /// Attention probabilities for one state-action pair.
    pub fn attention_probs(&self, obs: &[f64], action: usize) -> Option<Vec<f64>> {
        let att = self.attention.as_ref()?;
        let all = self.chain_psi(obs);
        attend(att, &self.w, &self.action_slices(&all, action)).ok().map(|(_, p, _)| p)
    }

    fn q_from_psi(&self, psi: &[f64]) -> Vec<f64> {
        psi.chunks(self.n).map(|p| dot(p, &self.w)).collect()
    }

    /// Double-Q target `r + gamma * psi_target(s', b*, w) . w` with `b*` the
    /// greedy action of the acting network, bootstrap masked on terminal
    /// transitions. A plain max over the target's own estimates compounds
    /// its upward bias by `1 / (1 - gamma)` when most rewards are zero.
    pub fn td_target(&self, t: &Transition) -> f64 {
        if t.terminal {
            return t.reward;
        }
        let b = argmax(&self.q_values(&t.next_obs));
        let phi = l2_normalize(&self.target_encoder.predict(&t.next_obs));
        let psi = self.target_head.predict(&self.head_input(&phi));
        t.reward + self.cfg.gamma * dot(&psi[b * self.n..(b + 1) * self.n], &self.w)
    }

    /// Gradient of `0.5 * (r - phi(s') . w)^2` with respect to `w`, i.e.
    /// `-(r - phi . w) * phi`.
    pub fn reward_loss_grad(&self, next_obs: &[f64], reward: f64) -> Vec<f64> {
        let phi = self.features(next_obs);
        let err = reward - dot(&phi, &self.w);
        phi.iter().map(|p| -err * p).collect()
    }

    /// Batch mean of the reward loss.
    pub fn reward_loss(&self, batch: &[&Transition]) -> f64 {
        let b = batch.len() as f64;
        batch
            .iter()
            .map(|t| {
                let e = t.reward - dot(&self.features(&t.next_obs), &self.w);
                0.5 * e * e / b
            })
            .sum()
    }

    /// Batch mean of `0.5 * (y - psi(s, a, w) . w)^2` at the current parameters.
    pub fn psi_loss(&self, batch: &[&Transition], ys: &[f64]) -> f64 {
        let b = batch.len() as f64;
        let n = self.n;
        batch
            .iter()
            .zip(ys)
            .map(|(t, y)| {
                let psi = self.psi(&t.obs);
                let d = dot(&psi[t.action * n..(t.action + 1) * n], &self.w) - y;
                0.5 * d * d / b
            })
            .sum()
    }

    /// Attention output added to `psi(s, a)`, if attention is enabled.
    pub fn attention_readout(&self, obs: &[f64], action: usize) -> Option<Vec<f64>> {
        let att = self.attention.as_ref()?;
        let all = self.chain_psi(obs);
        attend(att, &self.w, &self.action_slices(&all, action)).ok().map(|(o, _, _)| o)
    }

    /// [`Self::psi_loss`] with the attention outputs held at `readouts`
    /// (one per transition). This is the loss the network parameters see,
    /// since keys and values are not differentiated.
    pub fn psi_loss_with_readouts(&self, batch: &[&Transition], ys: &[f64], readouts: &[Vec<f64>]) -> f64 {
        let b = batch.len() as f64;
        let n = self.n;
        batch
            .iter()
            .zip(ys)
            .zip(readouts)
            .map(|((t, y), r)| {
                let psi = self.plastic_psi(&t.obs);
                let q: f64 = psi[t.action * n..(t.action + 1) * n].iter().zip(r).zip(&self.w).map(|((p, o), w)| (p + o) * w).sum();
                let d = q - y;
                0.5 * d * d / b
            })
            .sum()
    }

    /// Gradients of the TD loss for fixed targets `ys`. `w` receives none.
    pub fn sf_q_loss_grads(&mut self, batch: &[&Transition], ys: &[f64]) -> Result<SfGrads> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let n = self.n;
        let b = batch.len() as f64;
        let e_len = self.encoder.num_params();
        let mut g = SfGrads {
            theta: vec![0.0; e_len + self.head.mlp.num_params()],
            fresh: vec![0.0; self.head.fresh_len()],
            attention: vec![0.0; self.attention.as_ref().map_or(0, |a| a.params().len())],
            prob_sum: vec![0.0; self.attention_sum.len()],
            ..SfGrads::default()
        };
        let mut up = vec![0.0; n * Action::COUNT];
        for (t, y) in batch.iter().zip(ys) {
            let a = t.action;
            let (e, e_cache) = self.encoder.forward(&t.obs)?;
            let phi = l2_normalize(&e);
            let (mut psi, h_cache) = self.head.forward(&self.head_input(&phi))?;
            let mut att_cache: Option<AttendCache> = None;
            if let Some(att) = &self.attention {
                let all = {
                    let mut all = self.chain_psi(&t.obs);
                    all[0] = psi.clone();
                    all
                };
                let (o, p, cache) = attend(att, &self.w, &self.action_slices(&all, a))?;
                psi[a * n..(a + 1) * n].iter_mut().zip(&o).for_each(|(x, v)| *x += v);
                g.prob_sum.iter_mut().zip(&p).for_each(|(s, v)| *s += v);
                att_cache = Some(cache);
            }
            let delta = dot(&psi[a * n..(a + 1) * n], &self.w) - y;
            g.loss += 0.5 * delta * delta / b;

            let d_psi: Vec<f64> = self.w.iter().map(|wi| delta * wi / b).collect();
            up.iter_mut().for_each(|u| *u = 0.0);
            up[a * n..(a + 1) * n].copy_from_slice(&d_psi);
            let (g_enc, g_head) = g.theta.split_at_mut(e_len);
            let dx = self
                .head
                .backward_into(&h_cache, &up, g_head, &mut g.fresh, true)?
                .expect("input gradient requested");
            let de = l2_normalize_backward(&e, &phi, &dx[..n]);
            self.encoder.backward_into(&e_cache, &de, g_enc, false)?;
            if let (Some(att), Some(cache)) = (&self.attention, &att_cache) {
                attend_backward(att, cache, &d_psi, &mut g.attention)?;
            }
            if let Some(cbp) = &mut self.learner.cbp {
                cbp.record(&h_cache.acts);
            }
        }
        Ok(g)
    }

    fn update_target(&mut self) {
        let tau = self.cfg.tau;
        polyak(self.target_encoder.params_mut(), self.encoder.params(), tau);
        polyak(self.target_head.mlp.params_mut(), self.head.mlp.params(), tau);
        if let (Some(t), Some(o)) = (&mut self.target_head.plast, &self.head.plast) {
            t.track(o, tau);
        }
        if self.learner.updates.is_multiple_of(self.cfg.target_period.max(1)) {
            self.target_encoder = self.encoder.clone();
            self.target_head = self.head.clone();
        }
    }
}

impl Agent for SfAgent {
    fn q_values(&self, obs: &[f64]) -> Vec<f64> {
        self.q_from_psi(&self.psi(obs))
    }

    fn train(&mut self, batch: &[&Transition], _step: u64) -> Result<TrainStats> {
        let ys: Vec<f64> = batch.iter().map(|t| self.td_target(t)).collect();
        let mut g = self.sf_q_loss_grads(batch, &ys)?;

        let b = batch.len() as f64;
        let mut gw = vec![0.0; self.n];
        for t in batch {
            let gi = self.reward_loss_grad(&t.next_obs, t.reward);
            gw.iter_mut().zip(&gi).for_each(|(a, x)| *a += x / b);
        }
        let reward_loss = self.reward_loss(batch);

        let mut theta = self.theta();
        let off = self.encoder.num_params();
        let plast = self.head.plast.as_mut().map(|p| (p, off));
        let resets = self.learner.apply(&mut theta, &mut g.theta, plast, &g.fresh)?;
        self.set_theta(&theta)?;
        self.w_adam.step(&mut self.w, &gw, self.cfg.w_lr)?;
        if let Some(att) = &mut self.attention {
            att.step(&g.attention, self.cfg.attention_lr)?;
            self.attention_sum.iter_mut().zip(&g.prob_sum).for_each(|(s, p)| *s += p);
            self.attention_count += batch.len();
        }
        self.update_target();
        Ok(TrainStats {
            loss: g.loss,
            reward_loss,
            resets,
        })
    }

    fn on_step(&mut self, step: u64) -> Result<()> {
        let due = self.head.plast.as_ref().is_some_and(|p| !p.injected && step >= p.inject_step);
        if due {
            self.head.inject(step, &mut self.learner.mech_rng)?;
            self.target_head.plast = self.head.plast.clone();
        }
        Ok(())
    }

    fn take_attention(&mut self) -> Option<Vec<f64>> {
        self.attention.as_ref()?;
        if self.attention_count == 0 {
            return None;
        }
        let c = self.attention_count as f64;
        let mean = self.attention_sum.iter().map(|s| s / c).collect();
        self.attention_sum.iter_mut().for_each(|s| *s = 0.0);
        self.attention_count = 0;
        Some(mean)
    }

    fn parameters(&self) -> Vec<f64> {
        let mut p = self.theta();
        p.extend_from_slice(&self.w);
        if let Some(plast) = &self.head.plast {
            p.extend_from_slice(plast.fresh());
        }
        if let Some(att) = &self.attention {
            p.extend_from_slice(att.params());
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consolidation::ChainConfig;
    use std::sync::Arc;

    const OBS: usize = 8;

    fn cfg() -> AgentConfig {
        AgentConfig {
            hidden: 12,
            sf_dim: 4,
            ..AgentConfig::default()
        }
    }

    fn one_hot(i: usize) -> Arc<[f64]> {
        let mut o = vec![0.0; OBS];
        o[i] = 1.0;
        Arc::from(o)
    }

    fn transitions() -> Vec<Transition> {
        (0..OBS)
            .map(|i| Transition {
                obs: one_hot(i),
                action: i % 4,
                reward: if i == 3 { 1.0 } else { 0.0 },
                next_obs: one_hot((i + 1) % OBS),
                terminal: i == 3,
            })
            .collect()
    }

    fn chain_mech(k: usize) -> Mechanisms {
        Mechanisms {
            chain: Some(ChainConfig::with_k(k)),
            ..Mechanisms::default()
        }
    }

    #[test]
    fn q_is_psi_dot_w() {
        let a = SfAgent::new(&cfg(), &Mechanisms::default(), OBS, 0).unwrap();
        let obs = one_hot(2);
        let psi = a.psi(&obs);
        let q = a.q_values(&obs);
        for (i, qa) in q.iter().enumerate() {
            let direct: f64 = psi[i * 4..(i + 1) * 4].iter().zip(a.w()).map(|(x, y)| x * y).sum();
            assert_eq!(*qa, direct);
        }
    }

    #[test]
    fn features_have_unit_norm() {
        let a = SfAgent::new(&cfg(), &Mechanisms::default(), OBS, 0).unwrap();
        let phi = a.features(&one_hot(5));
        assert!((phi.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn target_examples() {
        let a = SfAgent::new(&AgentConfig { gamma: 0.0, ..cfg() }, &Mechanisms::default(), OBS, 0).unwrap();
        let t = &transitions()[0];
        assert_eq!(a.td_target(t), t.reward);
        let a = SfAgent::new(&cfg(), &Mechanisms::default(), OBS, 0).unwrap();
        assert_eq!(a.td_target(&transitions()[3]), 1.0);
    }

    #[test]
    fn reward_gradient_examples() {
        let mut a = SfAgent::new(&cfg(), &Mechanisms::default(), OBS, 0).unwrap();
        let s = one_hot(1);
        let phi = a.features(&s);
        let r = dot(&phi, a.w());
        assert!(a.reward_loss_grad(&s, r).iter().all(|g| g.abs() < 1e-15));
        a.set_w(&[0.0; 4]).unwrap();
        let g = a.reward_loss_grad(&s, 1.0);
        for (gi, p) in g.iter().zip(&phi) {
            assert_eq!(*gi, -p);
        }
    }

    #[test]
    fn psi_loss_never_moves_w() {
        let mut a = SfAgent::new(&cfg(), &Mechanisms::default(), OBS, 0).unwrap();
        let ts = transitions();
        let batch: Vec<&Transition> = ts.iter().collect();
        let w0 = a.w().to_vec();
        let ys = vec![0.0; batch.len()];
        let g = a.sf_q_loss_grads(&batch, &ys).unwrap();
        assert_eq!(g.theta.len(), a.theta().len());
        assert_eq!(a.w(), w0.as_slice());
    }

    #[test]
    fn zero_loss_gives_zero_gradient() {
        let mut a = SfAgent::new(&cfg(), &Mechanisms::default(), OBS, 0).unwrap();
        let ts = transitions();
        let batch: Vec<&Transition> = ts.iter().collect();
        let ys: Vec<f64> = ts.iter().map(|t| a.q_values(&t.obs)[t.action]).collect();
        let g = a.sf_q_loss_grads(&batch, &ys).unwrap();
        assert!(g.theta.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn empty_batch_rejected() {
        let mut a = SfAgent::new(&cfg(), &Mechanisms::default(), OBS, 0).unwrap();
        assert!(a.sf_q_loss_grads(&[], &[]).is_err());
    }

    #[test]
    fn chain_with_zero_variables_is_plain_sf() {
        let ts = transitions();
        let batch: Vec<&Transition> = ts.iter().collect();
        let mut plain = SfAgent::new(&cfg(), &Mechanisms::default(), OBS, 3).unwrap();
        let mut zero = SfAgent::new(&cfg(), &chain_mech(0), OBS, 3).unwrap();
        for step in 0..30 {
            plain.train(&batch, step).unwrap();
            zero.train(&batch, step).unwrap();
        }
        assert_eq!(plain.parameters(), zero.parameters());
    }

    #[test]
    fn second_variable_moves_towards_first() {
        let ts = transitions();
        let batch: Vec<&Transition> = ts.iter().collect();
        let mut a = SfAgent::new(&cfg(), &chain_mech(3), OBS, 3).unwrap();
        let chain_cfg = ChainConfig::with_k(3);
        let before = a.chain().unwrap().clone();
        // the Adam step alone
        let mut probe = a.clone();
        probe.learner.chain = None;
        probe.train(&batch, 0).unwrap();
        let u1_half = probe.theta();
        a.train(&batch, 0).unwrap();
        let after = a.chain().unwrap();
        let c = chain_cfg.eta(1) * chain_cfg.flow(0);
        for j in 0..u1_half.len() {
            let expect = before.vars[1][j] + c * (u1_half[j] - before.vars[1][j]);
            assert!((after.vars[1][j] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn attention_requires_two_variables() {
        let c = AgentConfig {
            attention: true,
            ..cfg()
        };
        assert!(SfAgent::new(&c, &chain_mech(1), OBS, 0).is_err());
        assert!(SfAgent::new(&c, &chain_mech(3), OBS, 0).is_ok());
    }

    #[test]
    fn attention_starts_uniform_and_inert() {
        let c = AgentConfig {
            attention: true,
            ..cfg()
        };
        let a = SfAgent::new(&c, &chain_mech(5), OBS, 0).unwrap();
        let obs = one_hot(1);
        assert_eq!(a.psi(&obs), a.plastic_psi(&obs));
        for p in a.attention_probs(&obs, 2).unwrap() {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_training_logs_normalised_probabilities() {
        let c = AgentConfig {
            attention: true,
            ..cfg()
        };
        let mut a = SfAgent::new(&c, &chain_mech(4), OBS, 0).unwrap();
        let ts = transitions();
        let batch: Vec<&Transition> = ts.iter().collect();
        for step in 0..20 {
            a.train(&batch, step).unwrap();
            let p = a.take_attention().unwrap();
            assert_eq!(p.len(), 3);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let chain = a.chain().unwrap();
        assert_ne!(chain.vars[0], chain.vars[1]);
    }

    #[test]
    fn training_fits_rewards() {
        let ts = transitions();
        let batch: Vec<&Transition> = ts.iter().collect();
        // as many features as states, so a linear reward readout exists; the
        // encoder is held nearly still so w chases a fixed target
        let c = AgentConfig {
            lr: 1e-6,
            w_lr: 1e-2,
            sf_dim: OBS,
            ..cfg()
        };
        let mut a = SfAgent::new(&c, &Mechanisms::default(), OBS, 1).unwrap();
        let before = a.reward_loss(&batch);
        for step in 0..3000 {
            a.train(&batch, step).unwrap();
        }
        let after = a.reward_loss(&batch);
        assert!(after < 0.2 * before, "{before} -> {after}");
    }
}
