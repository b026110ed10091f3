//! Central finite-difference validation of every gradient path used for
//! training.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::agents::{Agent, AgentConfig, AgentKind, DqnAgent, Mechanisms, SfAgent, Transition};
use crate::attention::{attend, attend_backward, AttentionHead};
use crate::consolidation::ChainConfig;
use crate::error::Result;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const PROBES: usize = 10;
/// Denominator floor of the relative error.
pub const FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    pub probes: usize,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Compares `analytic` with central differences of `f` at `x0` on `probes`
/// randomly chosen coordinates.
pub fn check(
    name: &str,
    f: impl Fn(&[f64]) -> f64,
    x0: &[f64],
    analytic: &[f64],
    probes: usize,
    rng: &mut impl Rng,
) -> GradCheckReport {
    assert_eq!(x0.len(), analytic.len(), "gradient does not match parameters");
    let picks = sample(rng, x0.len(), probes.min(x0.len()));
    let mut x = x0.to_vec();
    let mut worst = 0.0f64;
    for i in picks.iter() {
        x[i] = x0[i] + STEP;
        let up = f(&x);
        x[i] = x0[i] - STEP;
        let down = f(&x);
        x[i] = x0[i];
        let numeric = (up - down) / (2.0 * STEP);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    GradCheckReport {
        name: name.into(),
        probes: picks.len(),
        max_rel_error: worst,
    }
}

const OBS: usize = 12;

fn random_batch(rng: &mut ChaCha8Rng, size: usize) -> Vec<Transition> {
    let mut dense = || -> Arc<[f64]> { Arc::from((0..OBS).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>()) };
    let mut out = Vec::with_capacity(size);
    for i in 0..size {
        let (obs, next_obs) = (dense(), dense());
        out.push(Transition {
            obs,
            action: i % 4,
            reward: [0.0, 1.0, -1.0][i % 3],
            next_obs,
            terminal: i % 5 == 4,
        });
    }
    out
}

fn small(kind: AgentKind) -> AgentConfig {
    AgentConfig {
        kind,
        hidden: 16,
        sf_dim: 10,
        ..AgentConfig::default()
    }
}

fn perturb(values: &mut [f64], rng: &mut ChaCha8Rng, scale: f64) {
    values.iter_mut().for_each(|v| *v += rng.random_range(-scale..scale));
}

/// Runs every check with the given seed.
pub fn run_all(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ts = random_batch(&mut rng, 6);
    let batch: Vec<&Transition> = ts.iter().collect();
    let ys: Vec<f64> = (0..batch.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut reports = Vec::new();

    // double DQN
    let mut dqn = DqnAgent::new(&small(AgentKind::Dqn), &Mechanisms::default(), OBS, seed)?;
    let (_, grads, _) = dqn.loss_grads(&batch, &ys)?;
    let theta = dqn.online().mlp.params().to_vec();
    let probe = dqn.clone();
    reports.push(check(
        "dqn q-network",
        |x| {
            let mut a = probe.clone();
            a.set_parameters(x).unwrap();
            a.loss(&batch, &ys)
        },
        &theta,
        &grads,
        PROBES,
        &mut rng,
    ));

    // DQN with an injected last layer: fresh copy moved away from its twin
    let mech = Mechanisms {
        p_last_step: Some(0),
        ..Mechanisms::default()
    };
    let mut injected = DqnAgent::new(&small(AgentKind::Dqn), &mech, OBS, seed)?;
    injected.on_step(0)?;
    perturb(injected.online_mut().plast.as_mut().unwrap().fresh_mut(), &mut rng, 0.2);
    let (_, grads, fresh_grads) = injected.loss_grads(&batch, &ys)?;
    let theta = injected.online().mlp.params().to_vec();
    let probe = injected.clone();
    reports.push(check(
        "dqn p-last network",
        |x| {
            let mut a = probe.clone();
            a.set_parameters(x).unwrap();
            a.loss(&batch, &ys)
        },
        &theta,
        &grads,
        PROBES,
        &mut rng,
    ));
    let fresh0 = injected.online().plast.as_ref().unwrap().fresh().to_vec();
    reports.push(check(
        "dqn p-last fresh layer",
        |x| {
            let mut a = probe.clone();
            a.online_mut().plast.as_mut().unwrap().fresh_mut().copy_from_slice(x);
            a.loss(&batch, &ys)
        },
        &fresh0,
        &fresh_grads,
        PROBES,
        &mut rng,
    ));

    // SF agent, TD loss through head and encoder
    let mut sf = SfAgent::new(&small(AgentKind::Sf), &Mechanisms::default(), OBS, seed)?;
    let g = sf.sf_q_loss_grads(&batch, &ys)?;
    let theta = sf.theta();
    let probe = sf.clone();
    reports.push(check(
        "sf encoder+head",
        |x| {
            let mut a = probe.clone();
            a.set_theta(x).unwrap();
            a.psi_loss(&batch, &ys)
        },
        &theta,
        &g.theta,
        PROBES,
        &mut rng,
    ));
    // the encoder alone (its parameters come first)
    let enc = sf.encoder().num_params();
    reports.push(check(
        "sf encoder",
        |x| {
            let mut a = probe.clone();
            let mut t = theta.clone();
            t[..enc].copy_from_slice(x);
            a.set_theta(&t).unwrap();
            a.psi_loss(&batch, &ys)
        },
        &theta[..enc],
        &g.theta[..enc],
        PROBES,
        &mut rng,
    ));

    // reward weights
    let w0 = sf.w().to_vec();
    let b = batch.len() as f64;
    let mut gw = vec![0.0; w0.len()];
    for t in &batch {
        for (a, x) in gw.iter_mut().zip(sf.reward_loss_grad(&t.next_obs, t.reward)) {
            *a += x / b;
        }
    }
    reports.push(check(
        "sf reward weights",
        |x| {
            let mut a = probe.clone();
            a.set_w(x).unwrap();
            a.reward_loss(&batch)
        },
        &w0,
        &gw,
        PROBES,
        &mut rng,
    ));

    // SF with a consolidation chain and attention readout
    let mech = Mechanisms {
        chain: Some(ChainConfig::with_k(4)),
        ..Mechanisms::default()
    };
    let cfg = AgentConfig {
        attention: true,
        ..small(AgentKind::Sf)
    };
    let mut att = SfAgent::new(&cfg, &mech, OBS, seed)?;
    for step in 0..5 {
        att.train(&batch, step)?;
    }
    perturb(att.attention_head_mut().unwrap().params_mut(), &mut rng, 0.5);
    let g = att.sf_q_loss_grads(&batch, &ys)?;
    let theta = att.theta();
    let probe = att.clone();
    // keys and values are constants for the network parameters
    let readouts: Vec<Vec<f64>> = batch
        .iter()
        .map(|t| att.attention_readout(&t.obs, t.action).expect("attention enabled"))
        .collect();
    reports.push(check(
        "sf+sc attention network",
        |x| {
            let mut a = probe.clone();
            a.set_theta(x).unwrap();
            a.psi_loss_with_readouts(&batch, &ys, &readouts)
        },
        &theta,
        &g.theta,
        PROBES,
        &mut rng,
    ));
    let p0 = att.attention_head().unwrap().params().to_vec();
    reports.push(check(
        "sf+sc attention projections",
        |x| {
            let mut a = probe.clone();
            a.attention_head_mut().unwrap().params_mut().copy_from_slice(x);
            a.psi_loss(&batch, &ys)
        },
        &p0,
        &g.attention,
        PROBES,
        &mut rng,
    ));

    // SF head with an injected last layer
    let mech = Mechanisms {
        p_last_step: Some(0),
        ..Mechanisms::default()
    };
    let mut sfp = SfAgent::new(&small(AgentKind::Sf), &mech, OBS, seed)?;
    sfp.on_step(0)?;
    perturb(sfp.head_mut().plast.as_mut().unwrap().fresh_mut(), &mut rng, 0.2);
    let g = sfp.sf_q_loss_grads(&batch, &ys)?;
    let probe = sfp.clone();
    let fresh0 = sfp.head().plast.as_ref().unwrap().fresh().to_vec();
    reports.push(check(
        "sf p-last fresh layer",
        |x| {
            let mut a = probe.clone();
            a.head_mut().plast.as_mut().unwrap().fresh_mut().copy_from_slice(x);
            a.psi_loss(&batch, &ys)
        },
        &fresh0,
        &g.fresh,
        PROBES,
        &mut rng,
    ));
    let theta = sfp.theta();
    reports.push(check(
        "sf p-last network",
        |x| {
            let mut a = probe.clone();
            a.set_theta(x).unwrap();
            a.psi_loss(&batch, &ys)
        },
        &theta,
        &g.theta,
        PROBES,
        &mut rng,
    ));

    // the attention head on its own
    let n = 5;
    let head = AttentionHead::from_params(n, (0..3 * n * n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let sfs: Vec<Vec<f64>> = (0..6).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let d_out: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, _, cache) = attend(&head, &w, &sfs)?;
    let mut grads = vec![0.0; head.params().len()];
    attend_backward(&head, &cache, &d_out, &mut grads)?;
    reports.push(check(
        "attention head",
        |x| {
            let h = AttentionHead::from_params(n, x.to_vec()).unwrap();
            let (o, _, _) = attend(&h, &w, &sfs).unwrap();
            o.iter().zip(&d_out).map(|(a, b)| a * b).sum()
        },
        head.params(),
        &grads,
        PROBES,
        &mut rng,
    ));

    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.0001) - 1e-4 / 1.0001).abs() < 1e-12);
        assert!((relative_error(1e-9, 0.0) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn quadratic_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x0 = [0.3, -1.2, 2.0];
        let r = check("quad", |x| x.iter().map(|v| v * v).sum(), &x0, &[0.6, -2.4, 4.0], 3, &mut rng);
        assert!(r.passed(), "{r:?}");
        let r = check("wrong", |x| x.iter().map(|v| v * v).sum(), &x0, &[0.6, -2.0, 4.0], 3, &mut rng);
        assert!(!r.passed());
    }

    #[test]
    fn every_architecture_passes() {
        for seed in 0..3 {
            for r in run_all(seed).unwrap() {
                assert!(r.passed(), "seed {seed}: {r:?}");
                assert_eq!(r.probes, PROBES);
            }
        }
    }
}
