//! Cross-attention readout over consolidation variables.
//!
//! The reward weights `w` form the query. Keys and values come from the
//! layer-normalised differences between neighbouring chain variables,
//! `LN(psi_{u_k} - psi_{u_{k-1}})` for `k = 2..K`. The slow variables are
//! analytic inputs: no gradient flows back into them. The attended value is
//! added to the plastic successor features `psi_{u_1}`.

use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::nn::layer_norm;
use crate::optim::AdamState;

/// Single-head attention with square `n x n` projections (no biases).
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionHead {
    n: usize,
    /// `[W_q | W_k | W_v]`, each row-major `n x n`.
    params: Vec<f64>,
    adam: AdamState,
}

/// Values kept from [`attend`] for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct AttendCache {
    pub w: Vec<f64>,
    pub diffs: Vec<Vec<f64>>,
    pub query: Vec<f64>,
    pub keys: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

impl AttentionHead {
    /// Query and key projections uniform in `±1/sqrt(n)`; the value
    /// projection starts at zero so the readout initially adds nothing.
    pub fn new(n: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (n as f64).sqrt();
        let mut params: Vec<f64> = (0..2 * n * n).map(|_| rng.random_range(-bound..bound)).collect();
        params.extend(std::iter::repeat_n(0.0, n * n));
        Self::from_params(n, params).expect("sizes match")
    }

    pub fn from_params(n: usize, params: Vec<f64>) -> Result<Self> {
        check_len(3 * n * n, params.len())?;
        Ok(Self {
            n,
            adam: AdamState::new(params.len()),
            params,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn block(&self, i: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.params[i * nn..(i + 1) * nn]
    }

    pub fn step(&mut self, grads: &[f64], lr: f64) -> Result<()> {
        self.adam.step(&mut self.params, grads, lr).map(|_| ())
    }
}

fn matvec(m: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n).map(|o| m[o * n..(o + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn softmax(s: &[f64]) -> Vec<f64> {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Attends over `sfs = [psi_{u_1}, ..., psi_{u_K}]` (successor features of
/// one state-action pair for every chain variable). Returns the additive
/// output, the `K - 1` probabilities and the cache.
pub fn attend(head: &AttentionHead, w: &[f64], sfs: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>, AttendCache)> {
    let n = head.n;
    if sfs.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "attention needs at least two chain variables, got {}",
            sfs.len()
        )));
    }
    check_len(n, w.len())?;
    for s in sfs {
        check_len(n, s.len())?;
    }
    let diffs: Vec<Vec<f64>> = sfs
        .windows(2)
        .map(|p| {
            let d: Vec<f64> = p[1].iter().zip(&p[0]).map(|(a, b)| a - b).collect();
            layer_norm(&d)
        })
        .collect::<Result<_>>()?;
    let query = matvec(head.block(0), w);
    let keys: Vec<Vec<f64>> = diffs.iter().map(|d| matvec(head.block(1), d)).collect();
    let values: Vec<Vec<f64>> = diffs.iter().map(|d| matvec(head.block(2), d)).collect();
    let scale = 1.0 / (n as f64).sqrt();
    let scores: Vec<f64> = keys
        .iter()
        .map(|k| k.iter().zip(&query).map(|(a, b)| a * b).sum::<f64>() * scale)
        .collect();
    let probs = softmax(&scores);
    let mut out = vec![0.0; n];
    for (p, v) in probs.iter().zip(&values) {
        out.iter_mut().zip(v).for_each(|(o, x)| *o += p * x);
    }
    let cache = AttendCache {
        w: w.to_vec(),
        diffs,
        query,
        keys,
        values,
        probs: probs.clone(),
    };
    Ok((out, probs, cache))
}

/// Accumulates `d(d_out . output)/d(params)` into `grads`. The chain
/// variables and `w` receive nothing.
pub fn attend_backward(head: &AttentionHead, cache: &AttendCache, d_out: &[f64], grads: &mut [f64]) -> Result<()> {
    let n = head.n;
    check_len(n, d_out.len())?;
    check_len(head.params.len(), grads.len())?;
    let nn = n * n;
    let scale = 1.0 / (n as f64).sqrt();
    let dp: Vec<f64> = cache
        .values
        .iter()
        .map(|v| v.iter().zip(d_out).map(|(a, b)| a * b).sum())
        .collect();
    let mean_dp: f64 = cache.probs.iter().zip(&dp).map(|(p, d)| p * d).sum();
    let ds: Vec<f64> = cache.probs.iter().zip(&dp).map(|(p, d)| p * (d - mean_dp)).collect();

    let mut dq = vec![0.0; n];
    for (k, d) in cache.diffs.iter().enumerate() {
        // value projection
        let dv: Vec<f64> = d_out.iter().map(|g| cache.probs[k] * g).collect();
        for o in 0..n {
            for i in 0..n {
                grads[2 * nn + o * n + i] += dv[o] * d[i];
            }
        }
        // key projection and query
        for o in 0..n {
            let dkey = ds[k] * cache.query[o] * scale;
            for i in 0..n {
                grads[nn + o * n + i] += dkey * d[i];
            }
            dq[o] += ds[k] * cache.keys[k][o] * scale;
        }
    }
    for o in 0..n {
        for i in 0..n {
            grads[o * n + i] += dq[o] * cache.w[i];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn random_head(rng: &mut ChaCha8Rng, n: usize) -> AttentionHead {
        AttentionHead::from_params(n, random_vec(rng, 3 * n * n)).unwrap()
    }

    #[test]
    fn identical_variables_give_uniform_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let head = random_head(&mut rng, 4);
        let psi = random_vec(&mut rng, 4);
        let (_, probs, _) = attend(&head, &random_vec(&mut rng, 4), &vec![psi; 9]).unwrap();
        assert_eq!(probs.len(), 8);
        for p in probs {
            assert!((p - 0.125).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_value_projection_adds_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = AttentionHead::new(3, &mut rng);
        let sfs: Vec<Vec<f64>> = (0..4).map(|_| random_vec(&mut rng, 3)).collect();
        let (out, _, _) = attend(&head, &random_vec(&mut rng, 3), &sfs).unwrap();
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let head = random_head(&mut rng, 5);
            let sfs: Vec<Vec<f64>> = (0..6).map(|_| random_vec(&mut rng, 5)).collect();
            let (_, probs, _) = attend(&head, &random_vec(&mut rng, 5), &sfs).unwrap();
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_variable_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let head = random_head(&mut rng, 2);
        assert!(attend(&head, &[0.0, 1.0], &[vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 3;
        let head = random_head(&mut rng, n);
        let w = random_vec(&mut rng, n);
        let sfs: Vec<Vec<f64>> = (0..4).map(|_| random_vec(&mut rng, n)).collect();
        let d_out = random_vec(&mut rng, n);
        let f = |params: &[f64]| {
            let h = AttentionHead::from_params(n, params.to_vec()).unwrap();
            let (o, _, _) = attend(&h, &w, &sfs).unwrap();
            o.iter().zip(&d_out).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, _, cache) = attend(&head, &w, &sfs).unwrap();
        let mut grads = vec![0.0; 3 * n * n];
        attend_backward(&head, &cache, &d_out, &mut grads).unwrap();
        let h = 1e-6;
        for i in 0..grads.len() {
            let mut p = head.params().to_vec();
            p[i] += h;
            let up = f(&p);
            p[i] -= 2.0 * h;
            let down = f(&p);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grads[i]).abs() < 1e-7, "param {i}: fd={fd} analytic={}", grads[i]);
        }
    }

    #[test]
    fn permuting_slots_permutes_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 4;
        let head = random_head(&mut rng, n);
        let w = random_vec(&mut rng, n);
        let sfs: Vec<Vec<f64>> = (0..4).map(|_| random_vec(&mut rng, n)).collect();
        let (_, p, cache) = attend(&head, &w, &sfs).unwrap();
        // swapping the first two difference slots swaps their probabilities
        let mut diffs = cache.diffs.clone();
        diffs.swap(0, 1);
        let q = matvec(head.block(0), &w);
        let scores: Vec<f64> = diffs
            .iter()
            .map(|d| matvec(head.block(1), d).iter().zip(&q).map(|(a, b)| a * b).sum::<f64>() / (n as f64).sqrt())
            .collect();
        let swapped = softmax(&scores);
        assert!((swapped[0] - p[1]).abs() < 1e-15);
        assert!((swapped[1] - p[0]).abs() < 1e-15);
        assert!((swapped[2] - p[2]).abs() < 1e-15);
    }
}
