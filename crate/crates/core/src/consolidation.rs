//! Multi-timescale consolidation chain.
//!
//! A chain of `K` coupled copies `u_1 .. u_K` of a flat parameter vector.
//! Variable `k` has capacity `C_k = C_1 * base^(k-1)` and couples to its
//! slower neighbour with flow strength `g_{k,k+1} = g_12 * decay^-(k-1)`.
//! The last coupling drains into an implicit `u_{K+1} = 0`, which acts as a
//! leak.
//!
//! ```text
//! C_1 du_1/dt = g_12 (u_2 - u_1)                       (+ external input)
//! C_k du_k/dt = g_{k-1,k}(u_{k-1} - u_k) + g_{k,k+1}(u_{k+1} - u_k)
//! C_K du_K/dt = g_{K-1,K}(u_{K-1} - u_K) - g_{K,K+1} u_K
//! ```
//!
//! [`ChainState::euler_step`] is the production update (one explicit Euler
//! step, all right-hand sides read from the pre-step snapshot).
//! [`ode_oracle`] integrates the same system with classic RK4 on a much finer
//! grid and exists to check the Euler update. [`equilibrium_profile`] gives
//! the analytic steady state when `u_1` is held fixed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainConfig {
    /// Number of variables. `0` means no chain at all.
    pub k: usize,
    /// Capacity of the most plastic variable.
    pub c1: f64,
    /// Flow strength between `u_1` and `u_2`.
    pub g12: f64,
    /// Euler step size.
    pub dt: f64,
    /// Capacity growth factor per depth.
    pub capacity_base: f64,
    /// Flow-strength shrink factor per depth.
    pub flow_decay: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            k: 9,
            c1: 2.0,
            g12: 0.125,
            dt: 1.0,
            capacity_base: 2.0,
            flow_decay: 2.0,
        }
    }
}

impl ChainConfig {
    pub fn with_k(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("consolidation.{name} must be positive, got {v}")))
            }
        };
        positive("c1", self.c1)?;
        positive("g12", self.g12)?;
        positive("dt", self.dt)?;
        if !(self.capacity_base.is_finite() && self.capacity_base > 1.0) {
            return Err(Error::Config(format!(
                "consolidation.capacity_base must exceed 1, got {}",
                self.capacity_base
            )));
        }
        if !(self.flow_decay.is_finite() && self.flow_decay > 1.0) {
            return Err(Error::Config(format!(
                "consolidation.flow_decay must exceed 1, got {}",
                self.flow_decay
            )));
        }
        Ok(())
    }

    /// Capacity of variable `index` (0-based).
    pub fn capacity(&self, index: usize) -> f64 {
        self.c1 * self.capacity_base.powi(index as i32)
    }

    /// Flow strength between variable `index` and `index + 1` (0-based).
    /// `flow(K - 1)` is the leak of the last variable.
    pub fn flow(&self, index: usize) -> f64 {
        self.g12 * self.flow_decay.powi(-(index as i32))
    }

    /// Euler rate `dt / C_k`.
    pub fn eta(&self, index: usize) -> f64 {
        self.dt / self.capacity(index)
    }

    /// Per-variable `(up, down)` Euler coefficients: `eta_k * g_{k-1,k}` and
    /// `eta_k * g_{k,k+1}`.
    fn euler_coefficients(&self) -> Vec<(f64, f64)> {
        (0..self.k)
            .map(|i| {
                let up = if i == 0 { 0.0 } else { self.eta(i) * self.flow(i - 1) };
                (up, self.eta(i) * self.flow(i))
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    /// `vars[0]` is the plastic variable `u_1`.
    pub vars: Vec<Vec<f64>>,
    pub step_count: u64,
}

/// Builds a chain whose `K` variables all start as copies of `theta0`.
pub fn init_chain(cfg: &ChainConfig, theta0: &[f64]) -> Result<ChainState> {
    cfg.validate()?;
    if cfg.k == 0 {
        return Err(Error::InvalidInput("a chain needs at least one variable".into()));
    }
    if let Some(i) = theta0.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("theta0[{i}] is not finite")));
    }
    Ok(ChainState {
        vars: vec![theta0.to_vec(); cfg.k],
        step_count: 0,
    })
}

impl ChainState {
    pub fn k(&self) -> usize {
        self.vars.len()
    }

    pub fn dim(&self) -> usize {
        self.vars.first().map_or(0, Vec::len)
    }

    pub fn plastic(&self) -> &[f64] {
        &self.vars[0]
    }

    pub fn plastic_mut(&mut self) -> &mut [f64] {
        &mut self.vars[0]
    }

    /// One synchronous Euler step, returning the new state.
    pub fn euler_step(&self, cfg: &ChainConfig) -> ChainState {
        let mut next = self.clone();
        next.euler_step_in_place(cfg);
        next
    }

    /// In-place form of [`ChainState::euler_step`]. Every variable is updated
    /// from the values it and its neighbours held before the call.
    pub fn euler_step_in_place(&mut self, cfg: &ChainConfig) {
        debug_assert_eq!(cfg.k, self.k());
        let coeffs = cfg.euler_coefficients();
        let k = self.k();
        let n = self.dim();
        for j in 0..n {
            // u_{k-1} as it was before this step
            let mut prev_old = 0.0;
            for (i, &(up, down)) in coeffs.iter().enumerate() {
                let cur = self.vars[i][j];
                let below = if i + 1 < k { self.vars[i + 1][j] } else { 0.0 };
                let mut delta = down * (below - cur);
                if i > 0 {
                    delta += up * (prev_old - cur);
                }
                self.vars[i][j] = cur + delta;
                prev_old = cur;
            }
        }
        self.step_count += 1;
    }

    /// `sum_k C_k * |u_k|^2`, the quantity the free dynamics never increase.
    pub fn energy(&self, cfg: &ChainConfig) -> f64 {
        self.vars
            .iter()
            .enumerate()
            .map(|(i, v)| cfg.capacity(i) * v.iter().map(|x| x * x).sum::<f64>())
            .sum()
    }
}

/// Right-hand side of the continuous chain, `du/dt`, for every variable.
/// With `clamp_first` the first variable is held fixed.
fn derivative(cfg: &ChainConfig, vars: &[Vec<f64>], clamp_first: bool, out: &mut [Vec<f64>]) {
    let k = vars.len();
    for i in 0..k {
        let inv_c = 1.0 / cfg.capacity(i);
        let g_down = cfg.flow(i);
        let g_up = if i > 0 { cfg.flow(i - 1) } else { 0.0 };
        for j in 0..vars[i].len() {
            if i == 0 && clamp_first {
                out[i][j] = 0.0;
                continue;
            }
            let cur = vars[i][j];
            let below = if i + 1 < k { vars[i + 1][j] } else { 0.0 };
            let mut flux = g_down * (below - cur);
            if i > 0 {
                flux += g_up * (vars[i - 1][j] - cur);
            }
            out[i][j] = flux * inv_c;
        }
    }
}

fn rk4(cfg: &ChainConfig, state: &ChainState, horizon: f64, substeps: usize, clamp: Option<f64>) -> ChainState {
    let mut y = state.vars.clone();
    if let Some(c) = clamp {
        y[0].iter_mut().for_each(|v| *v = c);
    }
    let h = horizon / substeps as f64;
    let zero = || y.iter().map(|v| vec![0.0; v.len()]).collect::<Vec<_>>();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (zero(), zero(), zero(), zero(), zero());
    let axpy = |dst: &mut Vec<Vec<f64>>, base: &Vec<Vec<f64>>, dir: &Vec<Vec<f64>>, a: f64| {
        for ((d, b), g) in dst.iter_mut().zip(base).zip(dir) {
            for ((dv, bv), gv) in d.iter_mut().zip(b).zip(g) {
                *dv = bv + a * gv;
            }
        }
    };
    let clamped = clamp.is_some();
    for _ in 0..substeps {
        derivative(cfg, &y, clamped, &mut k1);
        axpy(&mut tmp, &y, &k1, 0.5 * h);
        derivative(cfg, &tmp, clamped, &mut k2);
        axpy(&mut tmp, &y, &k2, 0.5 * h);
        derivative(cfg, &tmp, clamped, &mut k3);
        axpy(&mut tmp, &y, &k3, h);
        derivative(cfg, &tmp, clamped, &mut k4);
        for i in 0..y.len() {
            for j in 0..y[i].len() {
                y[i][j] += h / 6.0 * (k1[i][j] + 2.0 * k2[i][j] + 2.0 * k3[i][j] + k4[i][j]);
            }
        }
    }
    ChainState {
        vars: y,
        step_count: state.step_count,
    }
}

fn check_oracle_args(cfg: &ChainConfig, state: &ChainState, horizon: f64, substeps: usize) -> Result<()> {
    cfg.validate()?;
    if state.k() != cfg.k || cfg.k == 0 {
        return Err(Error::InvalidInput(format!(
            "state has {} variables, config expects {}",
            state.k(),
            cfg.k
        )));
    }
    if !(horizon.is_finite() && horizon >= 0.0) {
        return Err(Error::InvalidInput(format!("horizon must be non-negative, got {horizon}")));
    }
    if (substeps as f64) < horizon / cfg.dt || substeps == 0 {
        return Err(Error::InvalidInput(format!(
            "oracle needs at least horizon/dt = {} substeps, got {substeps}",
            (horizon / cfg.dt).ceil()
        )));
    }
    Ok(())
}

/// Integrates the free (no external input) continuous chain over `horizon`
/// with `substeps` RK4 steps.
pub fn ode_oracle(state: &ChainState, cfg: &ChainConfig, horizon: f64, substeps: usize) -> Result<ChainState> {
    check_oracle_args(cfg, state, horizon, substeps)?;
    Ok(rk4(cfg, state, horizon, substeps, None))
}

/// Like [`ode_oracle`] but with `u_1` pinned to `clamp` for the whole horizon.
pub fn ode_oracle_clamped(
    state: &ChainState,
    cfg: &ChainConfig,
    horizon: f64,
    substeps: usize,
    clamp: f64,
) -> Result<ChainState> {
    check_oracle_args(cfg, state, horizon, substeps)?;
    Ok(rk4(cfg, state, horizon, substeps, Some(clamp)))
}

/// Steady state of a scalar chain with `u_1` held at `clamp`.
///
/// Solves the tridiagonal balance equations for `u_2 .. u_K` (Thomas
/// algorithm). Positive flow strengths make the system strictly diagonally
/// dominant, so it is never singular.
pub fn equilibrium_profile(cfg: &ChainConfig, clamp: f64) -> Vec<f64> {
    let k = cfg.k;
    assert!(k >= 1, "equilibrium profile needs at least one variable");
    let mut profile = vec![clamp; k];
    if k == 1 {
        return profile;
    }
    // unknowns u_2..u_K, row r corresponds to variable r + 1 (0-based)
    let m = k - 1;
    let mut lower = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    for r in 0..m {
        let i = r + 1;
        let g_up = cfg.flow(i - 1);
        let g_down = cfg.flow(i);
        diag[r] = -(g_up + g_down);
        if r == 0 {
            rhs[r] = -g_up * clamp;
        } else {
            lower[r] = g_up;
        }
        if r + 1 < m {
            upper[r] = g_down;
        }
    }
    for r in 1..m {
        let w = lower[r] / diag[r - 1];
        assert!(w.is_finite(), "singular consolidation balance system");
        diag[r] -= w * upper[r - 1];
        rhs[r] -= w * rhs[r - 1];
    }
    let mut x = vec![0.0; m];
    x[m - 1] = rhs[m - 1] / diag[m - 1];
    for r in (0..m - 1).rev() {
        x[r] = (rhs[r] - upper[r] * x[r + 1]) / diag[r];
    }
    profile[1..].copy_from_slice(&x);
    profile
}
