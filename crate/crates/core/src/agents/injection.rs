//! Plasticity injection on the last layer.
//!
//! At the injection step the last linear layer `theta` is frozen and two
//! identical fresh copies `theta'_1 = theta'_2` are created. From then on the
//! head computes `h_theta(z) + h_theta'_1(z) - h_theta'_2(z)` and only
//! `theta'_1` is trained. At the instant of injection the two fresh terms
//! cancel exactly, so the output does not change.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LinearSlot, Mlp};
use crate::optim::AdamState;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PLastConfig {
    /// Fraction of the run after which plasticity is injected.
    pub inject_fraction: f64,
}

impl Default for PLastConfig {
    fn default() -> Self {
        Self { inject_fraction: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PInjectState {
    pub injected: bool,
    /// Global step at which injection happens (or happened).
    pub inject_step: u64,
    slot: Option<LinearSlot>,
    /// Last-layer parameters at injection time, kept frozen.
    frozen: Vec<f64>,
    /// Trainable fresh copy.
    fresh: Vec<f64>,
    /// Frozen twin of the fresh copy.
    twin: Vec<f64>,
    adam: AdamState,
}

impl PInjectState {
    pub fn scheduled(inject_step: u64) -> Self {
        Self {
            injected: false,
            inject_step,
            slot: None,
            frozen: Vec::new(),
            fresh: Vec::new(),
            twin: Vec::new(),
            adam: AdamState::new(0),
        }
    }

    /// Freezes the last layer of `net` and creates `theta'_1 = theta'_2`.
    pub fn inject(&mut self, net: &Mlp, at_step: u64, rng: &mut impl Rng) -> Result<()> {
        if self.injected {
            return Err(Error::State(format!(
                "plasticity was already injected at step {}",
                self.inject_step
            )));
        }
        let slot = net.last_linear();
        let bound = 1.0 / (slot.inp as f64).sqrt();
        let fresh: Vec<f64> = (0..(slot.inp + 1) * slot.out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.frozen = net.params()[slot.param_range()].to_vec();
        self.twin = fresh.clone();
        self.adam = AdamState::new(fresh.len());
        self.fresh = fresh;
        self.slot = Some(slot);
        self.injected = true;
        self.inject_step = at_step;
        Ok(())
    }

    pub fn slot(&self) -> Option<LinearSlot> {
        self.slot
    }

    pub fn fresh(&self) -> &[f64] {
        &self.fresh
    }

    pub fn fresh_mut(&mut self) -> &mut [f64] {
        &mut self.fresh
    }

    pub fn twin(&self) -> &[f64] {
        &self.twin
    }

    /// `h_theta'_1(z) - h_theta'_2(z)`; all zeros before injection.
    pub fn extra_output(&self, z: &[f64], out_dim: usize) -> Vec<f64> {
        let Some(slot) = self.slot.filter(|_| self.injected) else {
            return vec![0.0; out_dim];
        };
        let a = linear(&self.fresh, slot, z);
        let b = linear(&self.twin, slot, z);
        a.iter().zip(&b).map(|(x, y)| x - y).collect()
    }

    /// Accumulates gradients of the fresh copy and returns the extra
    /// gradient with respect to `z`.
    pub fn extra_backward(&self, z: &[f64], delta: &[f64], fresh_grads: &mut [f64]) -> Vec<f64> {
        let Some(slot) = self.slot.filter(|_| self.injected) else {
            return vec![0.0; z.len()];
        };
        let (inp, out) = (slot.inp, slot.out);
        let (gw, gb) = fresh_grads.split_at_mut(inp * out);
        for (g, d) in gb.iter_mut().zip(delta) {
            *g += d;
        }
        for (j, &zj) in z.iter().enumerate() {
            if zj != 0.0 {
                for (g, d) in gw[j * out..(j + 1) * out].iter_mut().zip(delta) {
                    *g += zj * d;
                }
            }
        }
        (0..inp)
            .map(|j| {
                let a = &self.fresh[j * out..(j + 1) * out];
                let b = &self.twin[j * out..(j + 1) * out];
                a.iter().zip(b).zip(delta).map(|((x, y), d)| (x - y) * d).sum()
            })
            .collect()
    }

    /// Adam step on the fresh copy.
    pub fn step_fresh(&mut self, grads: &[f64], lr: f64) -> Result<()> {
        let mut fresh = std::mem::take(&mut self.fresh);
        let res = self.adam.step(&mut fresh, grads, lr);
        self.fresh = fresh;
        res.map(|_| ())
    }

    /// Writes the frozen last-layer values back into `params`.
    pub fn restore_frozen(&self, params: &mut [f64]) {
        if let Some(slot) = self.slot.filter(|_| self.injected) {
            params[slot.param_range()].copy_from_slice(&self.frozen);
        }
    }

    /// Zeroes the gradient of the frozen last layer.
    pub fn mask_grads(&self, grads: &mut [f64]) {
        if let Some(slot) = self.slot.filter(|_| self.injected) {
            grads[slot.param_range()].iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Polyak-averages the fresh copy towards `online`'s.
    pub fn track(&mut self, online: &PInjectState, tau: f64) {
        if online.injected && !self.injected {
            *self = online.clone();
            return;
        }
        super::polyak(&mut self.fresh, &online.fresh, tau);
    }
}

fn linear(params: &[f64], slot: LinearSlot, z: &[f64]) -> Vec<f64> {
    let (inp, out) = (slot.inp, slot.out);
    let mut y = params[inp * out..].to_vec();
    for (j, &zj) in z.iter().enumerate() {
        if zj != 0.0 {
            for (yo, w) in y.iter_mut().zip(&params[j * out..(j + 1) * out]) {
                *yo += zj * w;
            }
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::head::Head;
    use crate::nn::MlpBuilder;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn injection_preserves_output_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = MlpBuilder::new(5).linear(8).relu().linear(3).build(&mut rng);
        let mut head = Head::new(mlp);
        let inputs: Vec<Vec<f64>> = (0..20).map(|_| (0..5).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let before: Vec<Vec<f64>> = inputs.iter().map(|x| head.predict(x)).collect();
        head.plast = Some(PInjectState::scheduled(10));
        head.inject(10, &mut rng).unwrap();
        for (x, b) in inputs.iter().zip(&before) {
            assert_eq!(&head.predict(x), b);
        }
    }

    #[test]
    fn double_injection_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = MlpBuilder::new(2).linear(2).build(&mut rng);
        let mut st = PInjectState::scheduled(0);
        st.inject(&mlp, 0, &mut rng).unwrap();
        assert!(st.inject(&mlp, 1, &mut rng).is_err());
    }

    #[test]
    fn output_decomposes_after_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mlp = MlpBuilder::new(3).linear(4).relu().linear(2).build(&mut rng);
        let mut head = Head::new(mlp);
        head.plast = Some(PInjectState::scheduled(0));
        head.inject(0, &mut rng).unwrap();
        // move the fresh copy away from its twin
        let st = head.plast.as_mut().unwrap();
        for v in st.fresh_mut() {
            *v += 0.1;
        }
        let x = [0.3, -0.4, 0.9];
        let (_, cache) = head.mlp.forward(&x).unwrap();
        let slot = head.mlp.last_linear();
        let z = &cache.acts[slot.layer];
        let base = head.mlp.predict(&x);
        let extra = head.plast.as_ref().unwrap().extra_output(z, 2);
        let total = head.predict(&x);
        for i in 0..2 {
            assert!((total[i] - base[i] - extra[i]).abs() < 1e-12);
            assert!(extra[i].abs() > 1e-3);
        }
    }
}
