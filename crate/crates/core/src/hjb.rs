//! Semi-Lagrangian implicit scheme for the HJB equation on a uniform
//! tensor grid over `(0, L)^d`, with a capped fixed-point control update.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{GridKind, GridPolicy, TensorGrid};
use crate::model::ModelConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct HjbSettings {
    /// Node count per axis.
    pub nodes: Vec<usize>,
    pub length: f64,
    /// Time steps of the scheme (independent of the model's `steps`).
    pub steps: usize,
    pub fp_iters: usize,
    pub fp_tol: f64,
    /// Refuse to run when the estimated footprint exceeds this many bytes.
    pub memory_budget: usize,
}

impl HjbSettings {
    pub fn cube(d: usize, nodes: usize, length: f64, steps: usize) -> Self {
        Self {
            nodes: vec![nodes; d],
            length,
            steps,
            fp_iters: 50,
            fp_tol: 1e-10,
            memory_budget: 4 << 30,
        }
    }

    /// 160 intervals on `(0, 3)`, 200 steps.
    pub fn single_species() -> Self {
        Self::cube(1, 161, 3.0, 200)
    }

    /// 32 nodes per axis on `(0, 3)^3`, 80 steps.
    pub fn three_species() -> Self {
        Self::cube(3, 32, 3.0, 80)
    }

    pub fn for_dim(d: usize) -> Self {
        match d {
            1 => Self::single_species(),
            3 => Self::three_species(),
            _ => Self::cube(d, 16, 3.0, 80),
        }
    }

    /// Bytes held by the stored value and control histories plus one
    /// step's work arrays.
    pub fn memory_estimate(&self) -> usize {
        let d = self.nodes.len();
        let n = self
            .nodes
            .iter()
            .try_fold(1usize, |acc, &k| acc.checked_mul(k))
            .unwrap_or(usize::MAX);
        let per_node = (self.steps + 1) + self.steps * d + 4 + 3 * d + d * d;
        n.saturating_mul(per_node).saturating_mul(8)
    }
}

/// Value and control histories on the grid; `values[M]` is zero and the
/// terminal control `u^M` is `u_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct HjbGrid {
    pub grid: TensorGrid,
    pub horizon: f64,
    pub u_min: f64,
    pub u_max: f64,
    /// `M + 1` rows of `N` nodal values.
    pub values: Vec<Vec<f64>>,
    /// `M` rows of `N x d` nodal controls.
    pub controls: Vec<Vec<f64>>,
}

impl HjbGrid {
    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    pub fn h(&self) -> f64 {
        self.horizon / self.steps() as f64
    }

    pub fn policy(&self) -> GridPolicy {
        GridPolicy {
            kind: GridKind::Hjb,
            grid: self.grid.clone(),
            steps: self.steps(),
            horizon: self.horizon,
            u_min: self.u_min,
            u_max: self.u_max,
            controls: self.controls.concat(),
        }
    }

    /// Value at step `m`, multilinear in space.
    pub fn value(&self, m: usize, x: &[f64]) -> f64 {
        self.grid.interp(&self.values[m], x, false)
    }
}

/// `X (1 + h (r - kappa X - u))`, clamped componentwise to `[0, L]`.
pub fn advected_point(cfg: &ModelConfig, x: &[f64], u: &[f64], h: f64, length: f64, out: &mut [f64]) {
    for i in 0..cfg.d {
        let kx: f64 = cfg.kappa_row(i).iter().zip(x).map(|(k, xj)| k * xj).sum();
        out[i] = (x[i] * (1.0 + h * (cfg.r[i] - kx - u[i]))).clamp(0.0, length);
    }
}

/// Nodal first derivatives of an interleaved field: entry
/// `(k * d + a) * comps + c` is the derivative of component `c` along
/// axis `a` at node `k`. Central differences inside, one-sided on the
/// boundary.
pub fn nodal_gradient(grid: &TensorGrid, field: &[f64], comps: usize) -> Vec<f64> {
    let d = grid.dim();
    let strides = grid.strides();
    let mut out = vec![0.0; grid.len() * d * comps];
    out.par_chunks_mut(d * comps)
        .enumerate()
        .for_each(|(k, g)| {
            let mut idx = vec![0; d];
            grid.unravel(k, &mut idx);
            for a in 0..d {
                let n = grid.dims[a];
                let dx = grid.spacing(a);
                let (lo, hi, span) = if idx[a] == 0 {
                    (k, k + strides[a], dx)
                } else if idx[a] == n - 1 {
                    (k - strides[a], k, dx)
                } else {
                    (k - strides[a], k + strides[a], 2.0 * dx)
                };
                for c in 0..comps {
                    g[a * comps + c] = (field[hi * comps + c] - field[lo * comps + c]) / span;
                }
            }
        });
    out
}

/// Everything one backward step reads from step `m + 1`.
pub struct NextFields<'a> {
    pub values: &'a [f64],
    /// `N x d`.
    pub controls: &'a [f64],
    /// `N x d` gradient of `values`.
    pub value_grad: &'a [f64],
}

/// Outcome of the capped fixed-point control iteration at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlUpdate {
    pub u: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Iterates `u <- clamp(u_next(Y) + h/(2 beta) (alpha + X . grad v_next(Y)))`
/// with `Y` the advected point of `(X, u)`, starting from `u_init`.
pub fn control_update(
    cfg: &ModelConfig,
    grid: &TensorGrid,
    next: &NextFields<'_>,
    x: &[f64],
    u_init: &[f64],
    h: f64,
    iters: usize,
    tol: f64,
) -> ControlUpdate {
    let d = cfg.d;
    let mut u = u_init.to_vec();
    let mut y = vec![0.0; d];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let gain = h / (2.0 * cfg.beta);
    while iterations < iters {
        iterations += 1;
        advected_point(cfg, x, &u, h, grid.length, &mut y);
        residual = 0.0;
        for i in 0..d {
            let un = grid.interp_strided(next.controls, d, i, &y, false);
            let gv = grid.interp_strided(next.value_grad, d, i, &y, false);
            let new = (un + gain * (cfg.alpha[i] + x[i] * gv)).clamp(cfg.u_min, cfg.u_max);
            residual = f64::max(residual, (new - u[i]).abs());
            u[i] = new;
        }
        if residual < tol {
            break;
        }
    }
    ControlUpdate {
        u,
        iterations,
        residual,
    }
}

/// The implicit operator `v / h - sum_i a_i(X) d_ii v` with
/// `a_i = (sigma_i X_i)^2 / 2`. Along an axis, the node at `X_i = L`
/// uses the pinned second difference instead of its ghost neighbour;
/// at `X_i = 0` the coefficient vanishes.
pub struct ImplicitOperator<'a> {
    pub grid: &'a TensorGrid,
    pub inv_h: f64,
    /// Pinned far-boundary second derivative.
    pub far_curvature: f64,
    sigma: &'a [f64],
}

impl<'a> ImplicitOperator<'a> {
    pub fn new(cfg: &'a ModelConfig, grid: &'a TensorGrid, h: f64) -> Self {
        let s2: f64 = cfg.sigma.iter().map(|s| s * s).sum();
        let far_curvature = if s2 > 0.0 { -2.0 / s2 } else { 0.0 };
        Self {
            grid,
            inv_h: 1.0 / h,
            far_curvature,
            sigma: &cfg.sigma,
        }
    }

    fn coef(&self, axis: usize, i: usize) -> f64 {
        let x = i as f64 * self.grid.spacing(axis);
        let s = self.sigma[axis] * x;
        0.5 * s * s / (self.grid.spacing(axis) * self.grid.spacing(axis))
    }

    /// Diagonal, off-diagonal couplings `(neighbour, weight)` and the
    /// constant boundary contribution for node `k`.
    fn row(&self, k: usize, idx: &mut [usize], offdiag: &mut Vec<(usize, f64)>) -> (f64, f64) {
        let strides = self.grid.strides();
        self.grid.unravel(k, idx);
        offdiag.clear();
        let mut diag = self.inv_h;
        let mut constant = 0.0;
        for a in 0..self.grid.dim() {
            let n = self.grid.dims[a];
            let c = self.coef(a, idx[a]);
            if c == 0.0 {
                continue;
            }
            if idx[a] == n - 1 {
                let dx = self.grid.spacing(a);
                constant += c * dx * dx * self.far_curvature;
            } else {
                diag += 2.0 * c;
                offdiag.push((k - strides[a], -c));
                offdiag.push((k + strides[a], -c));
            }
        }
        (diag, constant)
    }

    /// Dense matrix and boundary-adjusted right-hand side; for tests.
    pub fn to_dense(&self, rhs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.grid.len();
        let mut a = vec![0.0; n * n];
        let mut b = rhs.to_vec();
        let mut idx = vec![0; self.grid.dim()];
        let mut off = Vec::new();
        for k in 0..n {
            let (diag, constant) = self.row(k, &mut idx, &mut off);
            a[k * n + k] = diag;
            for &(j, w) in &off {
                a[k * n + j] += w;
            }
            b[k] += constant;
        }
        (a, b)
    }

    /// Solves `A v = rhs`: Thomas elimination in 1D, Jacobi sweeps
    /// (strictly diagonally dominant system) otherwise.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.grid.len();
        if self.grid.dim() == 1 {
            let mut lower = vec![0.0; n];
            let mut diag = vec![0.0; n];
            let mut upper = vec![0.0; n];
            let mut b = rhs.to_vec();
            let mut idx = [0usize];
            let mut off = Vec::new();
            for k in 0..n {
                let (dg, constant) = self.row(k, &mut idx, &mut off);
                diag[k] = dg;
                b[k] += constant;
                for &(j, w) in &off {
                    if j < k {
                        lower[k] = w;
                    } else {
                        upper[k] = w;
                    }
                }
            }
            return solve_tridiagonal(&lower, &diag, &upper, &b);
        }
        let d = self.grid.dim();
        let rows: Vec<(f64, f64, Vec<(usize, f64)>)> = (0..n)
            .into_par_iter()
            .map_init(
                || (vec![0; d], Vec::new()),
                |(idx, off), k| {
                    let (dg, constant) = self.row(k, idx, off);
                    (dg, rhs[k] + constant, off.clone())
                },
            )
            .collect();
        let mut v: Vec<f64> = rows.iter().map(|(dg, b, _)| b / dg).collect();
        let scale = v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        for _ in 0..10_000 {
            let next: Vec<f64> = rows
                .par_iter()
                .map(|(dg, b, off)| {
                    let s: f64 = off.iter().map(|&(j, w)| w * v[j]).sum();
                    (b - s) / dg
                })
                .collect();
            let change = next
                .iter()
                .zip(&v)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            v = next;
            if !change.is_finite() {
                break;
            }
            if change <= 1e-14 * scale {
                return Ok(v);
            }
        }
        Err(Error::LinearSolver("Jacobi sweeps did not converge".into()))
    }
}

/// Thomas algorithm for `lower[k] v[k-1] + diag[k] v[k] + upper[k] v[k+1] = b[k]`.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut beta = diag[0];
    if beta == 0.0 {
        return Err(Error::LinearSolver("zero pivot".into()));
    }
    x[0] = b[0] / beta;
    for k in 1..n {
        c[k] = upper[k - 1] / beta;
        beta = diag[k] - lower[k] * c[k];
        if beta == 0.0 {
            return Err(Error::LinearSolver("zero pivot".into()));
        }
        x[k] = (b[k] - lower[k] * x[k - 1]) / beta;
    }
    for k in (0..n - 1).rev() {
        x[k] -= c[k + 1] * x[k + 1];
    }
    Ok(x)
}

/// One backward step: controls by [`control_update`] at every node, then
/// the implicit solve for the value.
pub fn implicit_step(
    cfg: &ModelConfig,
    grid: &TensorGrid,
    h: f64,
    v_next: &[f64],
    u_next: &[f64],
    settings: &HjbSettings,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = cfg.d;
    let n = grid.len();
    let value_grad = nodal_gradient(grid, v_next, 1);
    let control_jac = nodal_gradient(grid, u_next, d);
    let next = NextFields {
        values: v_next,
        controls: u_next,
        value_grad: &value_grad,
    };
    let per_node: Vec<(Vec<f64>, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut x = vec![0.0; d];
            grid.coords(k, &mut x);
            let upd = control_update(
                cfg,
                grid,
                &next,
                &x,
                &u_next[k * d..(k + 1) * d],
                h,
                settings.fp_iters,
                settings.fp_tol,
            );
            let u = upd.u;
            let mut y = vec![0.0; d];
            advected_point(cfg, &x, &u, h, grid.length, &mut y);
            let mut rhs = grid.interp(v_next, &y, false) / h;
            for i in 0..d {
                let dxd = x[i] - cfg.x_desired[i];
                rhs += dxd * dxd - cfg.alpha[i] * u[i];
                let du = grid.interp_strided(u_next, d, i, &y, false) - u[i];
                rhs += cfg.beta / h * du * du;
            }
            let jac = &control_jac[k * d * d..(k + 1) * d * d];
            for a in 0..d {
                let s = cfg.sigma[a] * x[a];
                for c in 0..d {
                    let t = s * jac[a * d + c];
                    rhs += 0.5 * cfg.beta * t * t;
                }
            }
            (u, rhs, upd.residual)
        })
        .collect();
    let worst = per_node.iter().fold(0.0f64, |m, p| m.max(p.2));
    if worst > settings.fp_tol {
        log::debug!("control fixed point left residual {worst:.3e}");
    }
    let rhs: Vec<f64> = per_node.iter().map(|p| p.1).collect();
    let controls: Vec<f64> = per_node.into_iter().flat_map(|p| p.0).collect();
    let values = ImplicitOperator::new(cfg, grid, h).solve(&rhs)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::LinearSolver("non-finite value".into()));
    }
    Ok((values, controls))
}

/// Backward loop from `v^M = 0`.
pub fn solve(cfg: &ModelConfig, settings: &HjbSettings) -> Result<HjbGrid> {
    cfg.validate()?;
    if settings.nodes.len() != cfg.d {
        return Err(Error::DimensionMismatch {
            expected: cfg.d,
            got: settings.nodes.len(),
        });
    }
    if !(cfg.beta > 0.0) {
        return Err(Error::invalid("the control update needs beta > 0"));
    }
    if settings.steps == 0 {
        return Err(Error::invalid("HJB needs at least one time step"));
    }
    let estimate = settings.memory_estimate();
    if estimate > settings.memory_budget {
        return Err(Error::MemoryBudget {
            estimate: estimate as u64,
            budget: settings.memory_budget as u64,
        });
    }
    let grid = TensorGrid::new(settings.nodes.clone(), settings.length)?;
    let n = grid.len();
    let d = cfg.d;
    let m_steps = settings.steps;
    let h = cfg.horizon / m_steps as f64;
    let mut values = vec![Vec::new(); m_steps + 1];
    let mut controls = vec![Vec::new(); m_steps];
    values[m_steps] = vec![0.0; n];
    let mut u_next = vec![cfg.u_max; n * d];
    for m in (0..m_steps).rev() {
        let (v, u) = implicit_step(cfg, &grid, h, &values[m + 1], &u_next, settings)?;
        values[m] = v;
        u_next = u.clone();
        controls[m] = u;
        log::trace!("hjb step {m} done");
    }
    Ok(HjbGrid {
        grid,
        horizon: cfg.horizon,
        u_min: cfg.u_min,
        u_max: cfg.u_max,
        values,
        controls,
    })
}
