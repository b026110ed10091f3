//! Continual backprop: mature hidden units with the lowest contribution
//! utility are periodically re-initialised.
//!
//! The utility of unit `i` is an exponential moving average of
//! `|h_i| * sum_k |w_ik|`, where `w_ik` are its outgoing weights. Resets draw
//! fresh incoming weights, zero the bias and the outgoing weights, and clear
//! the unit's age and utility. A fresh unit starts with no influence on the
//! output.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Layer, LinearSlot, Mlp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CbpConfig {
    /// Utility decay `eta`.
    pub decay: f64,
    /// Expected fraction of eligible units replaced per update.
    pub replacement_rate: f64,
    /// Units younger than this (in updates) are never replaced.
    pub maturity_threshold: u64,
}

impl Default for CbpConfig {
    fn default() -> Self {
        Self {
            decay: 0.99,
            replacement_rate: 1e-4,
            maturity_threshold: 1_000,
        }
    }
}

/// One hidden ReLU layer tracked by CBP.
#[derive(Clone, Debug, PartialEq)]
pub struct CbpLayer {
    /// Index of the ReLU layer in the network; its output is `acts[relu + 1]`.
    pub relu: usize,
    pub incoming: LinearSlot,
    pub outgoing: LinearSlot,
    pub utility: Vec<f64>,
    pub age: Vec<u64>,
    pending: f64,
    batch_abs: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UnitReset {
    /// Index into [`CbpState::layers`].
    pub layer: usize,
    pub unit: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CbpState {
    pub cfg: CbpConfig,
    pub layers: Vec<CbpLayer>,
    batch_n: usize,
}

impl CbpState {
    /// Tracks every ReLU that sits between two linear layers of `net`.
    pub fn for_mlp(cfg: CbpConfig, net: &Mlp) -> Self {
        let slots = net.linear_slots();
        let layers = net
            .layers()
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Relu))
            .filter_map(|(relu, _)| {
                let incoming = slots.iter().rev().find(|s| s.layer < relu)?;
                let outgoing = slots.iter().find(|s| s.layer > relu)?;
                let n = incoming.out;
                Some(CbpLayer {
                    relu,
                    incoming: *incoming,
                    outgoing: *outgoing,
                    utility: vec![0.0; n],
                    age: vec![0; n],
                    pending: 0.0,
                    batch_abs: vec![0.0; n],
                })
            })
            .collect();
        Self { cfg, layers, batch_n: 0 }
    }

    /// Records the hidden activations of one forward pass (`cache.acts`).
    pub fn record(&mut self, acts: &[Vec<f64>]) {
        for layer in &mut self.layers {
            for (b, h) in layer.batch_abs.iter_mut().zip(&acts[layer.relu + 1]) {
                *b += h.abs();
            }
        }
        self.batch_n += 1;
    }

    /// Parameter indices touched by a reset (incoming weights and bias,
    /// outgoing weights), relative to the network's own parameter vector.
    pub fn reset_indices(&self, r: UnitReset) -> Vec<usize> {
        let l = &self.layers[r.layer];
        let (inc, out) = (l.incoming, l.outgoing);
        let mut idx: Vec<usize> = (0..inc.inp).map(|j| inc.offset + j * inc.out + r.unit).collect();
        idx.push(inc.bias_range().start + r.unit);
        idx.extend((0..out.out).map(|k| out.offset + r.unit * out.out + k));
        idx
    }
}

/// Updates utilities from the recorded batch, then re-initialises the
/// lowest-utility mature units. Returns the units that were reset.
pub fn cbp_update_and_reset(state: &mut CbpState, params: &mut [f64], rng: &mut impl Rng) -> Vec<UnitReset> {
    let eta = state.cfg.decay;
    let n = state.batch_n.max(1) as f64;
    let mut resets = Vec::new();
    // deepest layer first, so a shallower reset's zeroed outgoing weights
    // are not overwritten by the next layer's fresh incoming weights
    for (li, layer) in state.layers.iter_mut().enumerate().rev() {
        let out = layer.outgoing;
        let w = &params[out.weight_range()];
        for (i, u) in layer.utility.iter_mut().enumerate() {
            let h = layer.batch_abs[i] / n;
            let w_sum: f64 = w[i * out.out..(i + 1) * out.out].iter().map(|x| x.abs()).sum();
            *u = eta * *u + (1.0 - eta) * h * w_sum;
            layer.age[i] += 1;
        }
        layer.batch_abs.iter_mut().for_each(|b| *b = 0.0);

        let mut eligible: Vec<usize> = (0..layer.age.len())
            .filter(|&i| layer.age[i] > state.cfg.maturity_threshold)
            .collect();
        layer.pending += state.cfg.replacement_rate * eligible.len() as f64;
        if layer.pending < 1.0 || eligible.is_empty() {
            continue;
        }
        // lowest utility first, ties by index
        eligible.sort_by(|&a, &b| layer.utility[a].total_cmp(&layer.utility[b]).then(a.cmp(&b)));
        let count = (layer.pending.floor() as usize).min(eligible.len());
        layer.pending -= count as f64;
        let inc = layer.incoming;
        let bound = 1.0 / (inc.inp as f64).sqrt();
        for &unit in &eligible[..count] {
            for j in 0..inc.inp {
                params[inc.offset + j * inc.out + unit] = rng.random_range(-bound..bound);
            }
            params[inc.bias_range().start + unit] = 0.0;
            for k in 0..out.out {
                params[out.offset + unit * out.out + k] = 0.0;
            }
            layer.utility[unit] = 0.0;
            layer.age[unit] = 0;
            resets.push(UnitReset { layer: li, unit });
        }
    }
    state.batch_n = 0;
    resets
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::MlpBuilder;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        MlpBuilder::new(3).linear(4).relu().linear(4).relu().linear(2).build(&mut rng)
    }

    #[test]
    fn tracks_hidden_relu_layers() {
        let st = CbpState::for_mlp(CbpConfig::default(), &net());
        assert_eq!(st.layers.len(), 2);
        assert_eq!(st.layers[0].relu, 1);
        assert_eq!(st.layers[1].outgoing.out, 2);
    }

    #[test]
    fn silent_unit_decays_by_eta() {
        let mlp = net();
        let mut st = CbpState::for_mlp(CbpConfig::default(), &mlp);
        st.layers[0].utility = vec![1.0; 4];
        let mut acts: Vec<Vec<f64>> = mlp.forward(&[0.1, 0.2, 0.3]).unwrap().1.acts;
        acts[2][1] = 0.0;
        st.record(&acts);
        let mut params = mlp.params().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        cbp_update_and_reset(&mut st, &mut params, &mut rng);
        assert!((st.layers[0].utility[1] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn immature_units_never_reset() {
        let mlp = net();
        let cfg = CbpConfig {
            replacement_rate: 1.0,
            ..CbpConfig::default()
        };
        let mut st = CbpState::for_mlp(cfg, &mlp);
        let mut params = mlp.params().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            assert!(cbp_update_and_reset(&mut st, &mut params, &mut rng).is_empty());
        }
        assert_eq!(params, mlp.params());
    }

    #[test]
    fn reset_reinitialises_unit() {
        let mlp = net();
        let cfg = CbpConfig {
            replacement_rate: 0.5,
            maturity_threshold: 0,
            ..CbpConfig::default()
        };
        let mut st = CbpState::for_mlp(cfg, &mlp);
        let mut params = mlp.params().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = [0.3, -0.2, 0.9];
        let acts = mlp.forward(&x).unwrap().1.acts;
        st.record(&acts);
        let resets = cbp_update_and_reset(&mut st, &mut params, &mut rng);
        assert_eq!(resets.len(), 4);
        for r in &resets {
            let l = &st.layers[r.layer];
            let o = l.outgoing;
            assert!(params[o.offset + r.unit * o.out..o.offset + (r.unit + 1) * o.out].iter().all(|w| *w == 0.0));
            assert_eq!(params[l.incoming.bias_range().start + r.unit], 0.0);
            assert_eq!(l.age[r.unit], 0);
            assert_eq!(st.reset_indices(*r).len(), l.incoming.inp + 1 + o.out);
        }
    }

    #[test]
    fn zero_rate_leaves_params_alone() {
        let mlp = net();
        let cfg = CbpConfig {
            replacement_rate: 0.0,
            maturity_threshold: 0,
            ..CbpConfig::default()
        };
        let mut st = CbpState::for_mlp(cfg, &mlp);
        let mut params = mlp.params().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert!(cbp_update_and_reset(&mut st, &mut params, &mut rng).is_empty());
        }
        assert_eq!(params, mlp.params());
    }
}
