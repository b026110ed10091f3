use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{ForwardCache, Mlp};

use super::injection::PInjectState;

/// A network whose last layer can receive plasticity injection.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub mlp: Mlp,
    pub plast: Option<PInjectState>,
}

impl Head {
    pub fn new(mlp: Mlp) -> Self {
        Self { mlp, plast: None }
    }

    pub fn injected(&self) -> bool {
        self.plast.as_ref().is_some_and(|p| p.injected)
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        if !self.injected() {
            return self.mlp.predict(x);
        }
        self.forward(x).expect("input matches network").0
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let (mut out, cache) = self.mlp.forward(x)?;
        if let Some(p) = self.plast.as_ref().filter(|p| p.injected) {
            let z = &cache.acts[self.mlp.last_linear().layer];
            let extra = p.extra_output(z, out.len());
            out.iter_mut().zip(&extra).for_each(|(o, e)| *o += e);
        }
        Ok((out, cache))
    }

    /// Accumulates network gradients into `grads` (and fresh-copy gradients
    /// into `fresh_grads` once injected).
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        grads: &mut [f64],
        fresh_grads: &mut [f64],
        want_input: bool,
    ) -> Result<Option<Vec<f64>>> {
        match self.plast.as_ref().filter(|p| p.injected) {
            None => self.mlp.backward_into(cache, upstream, grads, want_input),
            Some(p) => {
                let layer = self.mlp.last_linear().layer;
                let dz = p.extra_backward(&cache.acts[layer], upstream, fresh_grads);
                self.mlp.backward_into_with(cache, upstream, grads, want_input, Some((layer, &dz)))
            }
        }
    }

    pub fn fresh_len(&self) -> usize {
        self.plast.as_ref().map_or(0, |p| p.fresh().len())
    }

    pub fn inject(&mut self, at_step: u64, rng: &mut impl Rng) -> Result<()> {
        let plast = self
            .plast
            .as_mut()
            .ok_or_else(|| Error::State("head has no plasticity-injection slot".into()))?;
        plast.inject(&self.mlp, at_step, rng)
    }
}
