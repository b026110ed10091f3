//! Small dense networks with hand-derived reverse-mode gradients.
//!
//! All parameters of an [`Mlp`] live in one flat vector so that optimizers,
//! consolidation chains and target-network updates can treat a network as a
//! plain `&[f64]`. Linear weights are stored input-major (`w[i * out + o]`),
//! which lets the forward pass skip zero inputs; observations here are one-hot.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

pub const L2_EPS: f64 = 1e-8;
pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layer {
    Linear { inp: usize, out: usize, offset: usize },
    LayerNorm,
    Relu,
    Tanh,
}

/// Description of one linear layer inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinearSlot {
    /// Position in the layer list.
    pub layer: usize,
    pub inp: usize,
    pub out: usize,
    pub offset: usize,
}

impl LinearSlot {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.inp * self.out
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.inp * self.out;
        start..start + self.out
    }

    pub fn param_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + (self.inp + 1) * self.out
    }
}

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Mlp {
    params: Vec<f64>,
    layers: Vec<Layer>,
    in_dim: usize,
    out_dim: usize,
    #[serde(skip, default = "next_generation")]
    generation: u64,
}

impl Clone for Mlp {
    fn clone(&self) -> Self {
        Self {
            params: self.params.clone(),
            layers: self.layers.clone(),
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            generation: next_generation(),
        }
    }
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params && self.layers == other.layers
    }
}

pub struct MlpBuilder {
    in_dim: usize,
    width: usize,
    layers: Vec<Layer>,
    n_params: usize,
}

impl MlpBuilder {
    pub fn new(in_dim: usize) -> Self {
        Self {
            in_dim,
            width: in_dim,
            layers: Vec::new(),
            n_params: 0,
        }
    }

    pub fn linear(mut self, out: usize) -> Self {
        self.layers.push(Layer::Linear {
            inp: self.width,
            out,
            offset: self.n_params,
        });
        self.n_params += (self.width + 1) * out;
        self.width = out;
        self
    }

    pub fn relu(mut self) -> Self {
        self.layers.push(Layer::Relu);
        self
    }

    pub fn tanh(mut self) -> Self {
        self.layers.push(Layer::Tanh);
        self
    }

    pub fn layer_norm(mut self) -> Self {
        self.layers.push(Layer::LayerNorm);
        self
    }

    /// Uniform fan-in initialisation in `±1/sqrt(fan_in)` for weights and biases.
    pub fn build(self, rng: &mut impl Rng) -> Mlp {
        let mut params = vec![0.0; self.n_params];
        for layer in &self.layers {
            if let Layer::Linear { inp, out, offset } = *layer {
                let bound = 1.0 / (inp as f64).sqrt();
                for p in &mut params[offset..offset + (inp + 1) * out] {
                    *p = rng.random_range(-bound..bound);
                }
            }
        }
        self.build_with(params).expect("builder tracks the parameter count")
    }

    pub fn build_with(self, params: Vec<f64>) -> Result<Mlp> {
        check_len(self.n_params, params.len())?;
        if !self.layers.iter().any(|l| matches!(l, Layer::Linear { .. })) {
            return Err(Error::InvalidInput("network needs at least one linear layer".into()));
        }
        Ok(Mlp {
            params,
            layers: self.layers,
            in_dim: self.in_dim,
            out_dim: self.width,
            generation: next_generation(),
        })
    }
}

/// Activations recorded by [`Mlp::forward`]: `acts[0]` is the input and
/// `acts[i + 1]` is the output of layer `i`.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub acts: Vec<Vec<f64>>,
    generation: u64,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache holds at least the input")
    }
}

/// Per-parameter gradient buffer with the same layout as the network.
#[derive(Clone, Debug, PartialEq)]
pub struct GradTape {
    pub grads: Vec<f64>,
}

impl GradTape {
    pub fn zeros(n: usize) -> Self {
        Self { grads: vec![0.0; n] }
    }

    pub fn zero(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn is_zero(&self) -> bool {
        self.grads.iter().all(|&g| g == 0.0)
    }
}

impl Mlp {
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access. Invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.generation = next_generation();
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_len(self.params.len(), params.len())?;
        self.params_mut().copy_from_slice(params);
        Ok(())
    }

    pub fn linear_slots(&self) -> Vec<LinearSlot> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(layer, l)| match *l {
                Layer::Linear { inp, out, offset } => Some(LinearSlot { layer, inp, out, offset }),
                _ => None,
            })
            .collect()
    }

    pub fn last_linear(&self) -> LinearSlot {
        *self.linear_slots().last().expect("validated at build time")
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        check_len(self.in_dim, x.len())?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for layer in &self.layers {
            let next = apply_layer(&self.params, layer, acts.last().unwrap());
            acts.push(next);
        }
        let out = acts.last().unwrap().clone();
        Ok((
            out,
            ForwardCache {
                acts,
                generation: self.generation,
            },
        ))
    }

    /// Forward pass without recording activations.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.predict_with(&self.params, x)
    }

    /// Forward pass using an external parameter vector with this network's layout.
    pub fn predict_with(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        assert_eq!(params.len(), self.params.len(), "parameter vector does not match layout");
        assert_eq!(x.len(), self.in_dim, "input does not match network");
        let mut h = x.to_vec();
        for layer in &self.layers {
            h = apply_layer(params, layer, &h);
        }
        h
    }

    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<GradTape> {
        let mut tape = GradTape::zeros(self.params.len());
        self.backward_into(cache, upstream, &mut tape.grads, false)?;
        Ok(tape)
    }

    /// Accumulates `d(upstream . output)/d(params)` into `grads` and, when
    /// `want_input` is set, returns the gradient with respect to the input.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        grads: &mut [f64],
        want_input: bool,
    ) -> Result<Option<Vec<f64>>> {
        self.backward_into_with(cache, upstream, grads, want_input, None)
    }

    /// [`Mlp::backward_into`] with an additional gradient `extra.1` added to
    /// the gradient flowing into the input of layer `extra.0` (for outputs
    /// computed outside the network from an intermediate activation).
    pub fn backward_into_with(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        grads: &mut [f64],
        want_input: bool,
        extra: Option<(usize, &[f64])>,
    ) -> Result<Option<Vec<f64>>> {
        if cache.generation != self.generation || cache.acts.len() != self.layers.len() + 1 {
            return Err(Error::State("forward cache is stale for this network".into()));
        }
        check_len(self.out_dim, upstream.len())?;
        check_len(self.params.len(), grads.len())?;
        let mut delta = upstream.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.acts[i];
            let output = &cache.acts[i + 1];
            let need_dx = i > 0 || want_input;
            delta = match *layer {
                Layer::Linear { inp, out, offset } => {
                    let w = &self.params[offset..offset + inp * out];
                    let (gw, gb) = grads[offset..offset + (inp + 1) * out].split_at_mut(inp * out);
                    for (gb, d) in gb.iter_mut().zip(&delta) {
                        *gb += d;
                    }
                    for (j, &xj) in input.iter().enumerate() {
                        if xj != 0.0 {
                            for (g, d) in gw[j * out..(j + 1) * out].iter_mut().zip(&delta) {
                                *g += xj * d;
                            }
                        }
                    }
                    if need_dx {
                        (0..inp)
                            .map(|j| w[j * out..(j + 1) * out].iter().zip(&delta).map(|(a, b)| a * b).sum())
                            .collect()
                    } else {
                        Vec::new()
                    }
                }
                Layer::Relu => delta.iter().zip(input).map(|(d, x)| if *x > 0.0 { *d } else { 0.0 }).collect(),
                Layer::Tanh => delta.iter().zip(output).map(|(d, y)| d * (1.0 - y * y)).collect(),
                Layer::LayerNorm => layer_norm_backward(input, output, &delta),
            };
            if let Some((at, add)) = extra {
                if at == i && need_dx {
                    delta.iter_mut().zip(add).for_each(|(d, a)| *d += a);
                }
            }
        }
        Ok(want_input.then_some(delta))
    }
}

fn apply_layer(params: &[f64], layer: &Layer, x: &[f64]) -> Vec<f64> {
    match *layer {
        Layer::Linear { inp, out, offset } => {
            let w = &params[offset..offset + inp * out];
            let mut y = params[offset + inp * out..offset + (inp + 1) * out].to_vec();
            for (j, &xj) in x.iter().enumerate() {
                if xj != 0.0 {
                    for (yo, wo) in y.iter_mut().zip(&w[j * out..(j + 1) * out]) {
                        *yo += xj * wo;
                    }
                }
            }
            y
        }
        Layer::Relu => x.iter().map(|v| v.max(0.0)).collect(),
        Layer::Tanh => x.iter().map(|v| v.tanh()).collect(),
        Layer::LayerNorm => layer_norm_unchecked(x),
    }
}

/// `x / max(|x|_2, 1e-8)`.
pub fn l2_normalize(x: &[f64]) -> Vec<f64> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(L2_EPS);
    x.iter().map(|v| v / norm).collect()
}

/// Gradient of [`l2_normalize`] with respect to its input.
pub fn l2_normalize_backward(x: &[f64], y: &[f64], dy: &[f64]) -> Vec<f64> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= L2_EPS {
        return dy.iter().map(|d| d / L2_EPS).collect();
    }
    let proj: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    dy.iter().zip(y).map(|(d, yi)| (d - yi * proj) / norm).collect()
}

/// Standardises `x` to zero mean and unit variance (no learned affine).
pub fn layer_norm(x: &[f64]) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(Error::InvalidInput("layer norm needs at least two features".into()));
    }
    Ok(layer_norm_unchecked(x))
}

fn layer_norm_unchecked(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    x.iter().map(|v| (v - mean) * inv).collect()
}

/// Gradient of [`layer_norm`] given its input `x`, output `y` and upstream `dy`.
pub fn layer_norm_backward(x: &[f64], y: &[f64], dy: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    let mean_dy = dy.iter().sum::<f64>() / n;
    let mean_dy_y = dy.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n;
    dy.iter().zip(y).map(|(d, yi)| inv * (d - mean_dy - yi * mean_dy_y)).collect()
}

pub fn argmax(values: &[f64]) -> usize {
    // first maximum wins ties
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let b = MlpBuilder::new(3).linear(4).relu().linear(2);
        let n = 4 * 4 + 5 * 2;
        let net = b.build_with(vec![0.0; n]).unwrap();
        assert_eq!(net.predict(&[1.0, -2.0, 3.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = MlpBuilder::new(2).linear(2).build_with(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(net.predict(&[0.3, -7.0]), vec![0.3, -7.0]);
    }

    #[test]
    fn forward_matches_straight_line_evaluation() {
        let mut r = rng();
        let net = MlpBuilder::new(3).linear(5).tanh().linear(2).build(&mut r);
        let p = net.params();
        for _ in 0..5 {
            let x: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
            // straight-line: h = tanh(W1^T x + b1), y = W2^T h + b2 (input-major)
            let mut h = [0.0; 5];
            for o in 0..5 {
                let mut s = p[15 + o];
                for i in 0..3 {
                    s += p[i * 5 + o] * x[i];
                }
                h[o] = s.tanh();
            }
            let off = 20;
            let mut y = [0.0; 2];
            for o in 0..2 {
                let mut s = p[off + 10 + o];
                for i in 0..5 {
                    s += p[off + i * 2 + o] * h[i];
                }
                y[o] = s;
            }
            let got = net.predict(&x);
            for o in 0..2 {
                assert!((got[o] - y[o]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_tape() {
        let net = MlpBuilder::new(3).linear(4).relu().linear(2).build(&mut rng());
        let (_, cache) = net.forward(&[0.1, 0.2, 0.3]).unwrap();
        assert!(net.backward(&cache, &[0.0, 0.0]).unwrap().is_zero());
    }

    #[test]
    fn scalar_weight_gradient_is_input() {
        let net = MlpBuilder::new(1).linear(1).build_with(vec![0.7, 0.0]).unwrap();
        let (_, cache) = net.forward(&[2.5]).unwrap();
        let tape = net.backward(&cache, &[1.0]).unwrap();
        assert_eq!(tape.grads, vec![2.5, 1.0]);
    }

    #[test]
    fn stale_cache_rejected() {
        let mut net = MlpBuilder::new(2).linear(2).build(&mut rng());
        let (_, cache) = net.forward(&[1.0, 1.0]).unwrap();
        net.params_mut()[0] += 1.0;
        assert!(net.backward(&cache, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let net = MlpBuilder::new(2).linear(2).build(&mut rng());
        assert!(net.forward(&[1.0]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut r = rng();
        let net = MlpBuilder::new(4).linear(6).layer_norm().tanh().linear(5).relu().linear(3).build(&mut r);
        let x: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
        let up = [0.3, -1.2, 0.8];
        let (_, cache) = net.forward(&x).unwrap();
        let mut grads = vec![0.0; net.num_params()];
        let dx = net.backward_into(&cache, &up, &mut grads, true).unwrap().unwrap();
        let f = |p: &[f64], x: &[f64]| dot(&net.predict_with(p, x), &up);
        let h = 1e-5;
        let mut p = net.params().to_vec();
        for i in 0..p.len() {
            let orig = p[i];
            p[i] = orig + h;
            let plus = f(&p, &x);
            p[i] = orig - h;
            let minus = f(&p, &x);
            p[i] = orig;
            let num = (plus - minus) / (2.0 * h);
            assert!((num - grads[i]).abs() <= 1e-6 * (1.0 + num.abs()), "param {i}");
        }
        let mut xp = x.clone();
        for i in 0..x.len() {
            xp[i] = x[i] + h;
            let plus = f(&p, &xp);
            xp[i] = x[i] - h;
            let minus = f(&p, &xp);
            xp[i] = x[i];
            assert!(((plus - minus) / (2.0 * h) - dx[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn l2_normalize_examples() {
        let y = l2_normalize(&[3.0, 4.0]);
        assert!((y[0] - 0.6).abs() < 1e-15 && (y[1] - 0.8).abs() < 1e-15);
        assert_eq!(l2_normalize(&[0.0, 1.0]), vec![0.0, 1.0]);
        assert_eq!(l2_normalize(&[0.0, 0.0, 0.0]), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn layer_norm_examples() {
        assert_eq!(layer_norm(&[2.0, 2.0, 2.0]).unwrap(), vec![0.0, 0.0, 0.0]);
        let y = layer_norm(&[1.0, -1.0]).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-5 && (y[1] + 1.0).abs() < 1e-5);
        assert!(layer_norm(&[1.0]).is_err());
        let mut r = rng();
        for _ in 0..20 {
            let x: Vec<f64> = (0..16).map(|_| r.random_range(-10.0..10.0)).collect();
            let y = layer_norm(&x).unwrap();
            let mean = y.iter().sum::<f64>() / 16.0;
            let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 2.0, 0.0]), 1);
        assert_eq!(argmax(&[0.5, 0.5, 0.5]), 0);
    }

    #[test]
    fn snapshot_is_flat_json() {
        let net = MlpBuilder::new(1).linear(1).build_with(vec![0.5, -0.25]).unwrap();
        let json = serde_json::to_value(&net).unwrap();
        assert_eq!(json["params"], serde_json::json!([0.5, -0.25]));
        let back: Mlp = serde_json::from_value(json).unwrap();
        assert_eq!(back, net);
    }
}
