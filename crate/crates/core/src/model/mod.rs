//! Controlled logistic SDE, its Euler scheme, and the Monte-Carlo cost.

mod config;
mod noise;

use std::io::Write;

use rayon::prelude::*;

pub use config::{ModelConfig, KAPPA_3, KAPPA_5};
pub use noise::{sample_seeds, NoiseKind, NoisePath};

use crate::error::{check_len, Error, Result};
use crate::policy::Policy;

/// `X_i (r_i - u_i - (kappa X)_i)`.
pub fn drift(cfg: &ModelConfig, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    check_len(cfg.d, x.len())?;
    check_len(cfg.d, u.len())?;
    let mut kx = vec![0.0; cfg.d];
    cfg.kappa_times(x, &mut kx);
    Ok((0..cfg.d)
        .map(|i| x[i] * (cfg.r[i] - u[i] - kx[i]))
        .collect())
}

/// One Euler step `X (1 + (r - u - kappa X) h + sigma dW)`.
///
/// `dw` is the raw Brownian increment (already scaled by `sqrt(h)`).
/// No positivity projection is applied.
pub fn euler_step(cfg: &ModelConfig, x: &[f64], u: &[f64], dw: &[f64], h: f64) -> Result<Vec<f64>> {
    check_len(cfg.d, x.len())?;
    check_len(cfg.d, u.len())?;
    check_len(cfg.d, dw.len())?;
    let mut out = vec![0.0; cfg.d];
    euler_step_into(cfg, x, u, dw, h, &mut out);
    Ok(out)
}

pub(crate) fn euler_step_into(
    cfg: &ModelConfig,
    x: &[f64],
    u: &[f64],
    dw: &[f64],
    h: f64,
    out: &mut [f64],
) {
    let d = cfg.d;
    for i in 0..d {
        let kx: f64 = cfg.kappa_row(i).iter().zip(x).map(|(k, xj)| k * xj).sum();
        out[i] = x[i] * (1.0 + (cfg.r[i] - u[i] - kx) * h + cfg.sigma[i] * dw[i]);
    }
}

/// One simulated sample path and its cost breakdown.
///
/// `states` holds `X^0..X^M` and `controls` holds `u^0..u^M`, both
/// `(M + 1) x d` row-major. `u^M` is the policy at the terminal state; it
/// only enters the cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub d: usize,
    pub steps: usize,
    pub h: f64,
    pub states: Vec<f64>,
    pub controls: Vec<f64>,
    pub cost_tracking: f64,
    pub cost_quota: f64,
    pub cost_variation: f64,
    pub total_cost: f64,
}

impl Trajectory {
    pub fn state(&self, m: usize) -> &[f64] {
        &self.states[m * self.d..(m + 1) * self.d]
    }

    pub fn control(&self, m: usize) -> &[f64] {
        &self.controls[m * self.d..(m + 1) * self.d]
    }

    pub fn any_negative(&self) -> bool {
        self.states.iter().any(|&x| x < 0.0)
    }

    /// TSV rows `t X_1..X_d u_1..u_d`, one per time level.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "# t")?;
        for i in 1..=self.d {
            write!(w, "\tX{i}")?;
        }
        for i in 1..=self.d {
            write!(w, "\tu{i}")?;
        }
        writeln!(w)?;
        for m in 0..=self.steps {
            write!(w, "{}", m as f64 * self.h)?;
            for v in self.state(m).iter().chain(self.control(m)) {
                write!(w, "\t{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Integrates the Euler scheme under `policy` along one noise path and
/// accumulates
///
/// ```text
/// J = sum_{m=1..M} h |X^m - X_d|^2 - h alpha.u^m + beta |u^{m+1} - u^m|^2
/// ```
///
/// with `u^{M+1} = u^M`.
pub fn simulate<P: Policy + ?Sized>(
    cfg: &ModelConfig,
    policy: &P,
    x0: &[f64],
    noise: &NoisePath,
) -> Result<Trajectory> {
    let d = cfg.d;
    let m_steps = cfg.steps;
    check_len(d, x0.len())?;
    check_len(d, policy.dim())?;
    check_len(d, noise.d)?;
    check_len(m_steps, noise.steps)?;
    let h = cfg.h();

    let mut states = vec![0.0; (m_steps + 1) * d];
    let mut controls = vec![0.0; (m_steps + 1) * d];
    states[..d].copy_from_slice(x0);
    for m in 0..m_steps {
        let (done, rest) = states.split_at_mut((m + 1) * d);
        let x = &done[m * d..];
        let u = &mut controls[m * d..(m + 1) * d];
        policy.control(x, cfg.time(m), u);
        let next = &mut rest[..d];
        euler_step_into(cfg, x, u, noise.step(m), h, next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::SimulationDiverged { step: m + 1 });
        }
    }
    policy.control(
        &states[m_steps * d..],
        cfg.time(m_steps),
        &mut controls[m_steps * d..],
    );

    let mut traj = Trajectory {
        d,
        steps: m_steps,
        h,
        states,
        controls,
        cost_tracking: 0.0,
        cost_quota: 0.0,
        cost_variation: 0.0,
        total_cost: 0.0,
    };
    let mut tracking = 0.0;
    let mut quota = 0.0;
    for m in 1..=m_steps {
        tracking += traj
            .state(m)
            .iter()
            .zip(&cfg.x_desired)
            .map(|(x, xd)| (x - xd) * (x - xd))
            .sum::<f64>();
        quota += traj
            .control(m)
            .iter()
            .zip(&cfg.alpha)
            .map(|(u, a)| a * u)
            .sum::<f64>();
    }
    traj.cost_tracking = h * tracking;
    traj.cost_quota = -h * quota;
    traj.cost_variation = qv_penalty_terms(cfg, &traj);
    traj.total_cost = traj.cost_tracking + traj.cost_quota + traj.cost_variation;
    Ok(traj)
}

/// The discrete quadratic-variation penalty `(beta / h) sum_{m=1..M} h |u^{m+1} - u^m|^2`
/// with `u^{M+1} = u^M`.
pub fn qv_penalty_terms(cfg: &ModelConfig, traj: &Trajectory) -> f64 {
    let mut acc = 0.0;
    for m in 1..traj.steps {
        acc += traj
            .control(m + 1)
            .iter()
            .zip(traj.control(m))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    cfg.beta * acc
}

/// Sample mean of the path cost with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl CostEstimate {
    pub fn from_samples(costs: &[f64]) -> Self {
        let n = costs.len();
        let mean = costs.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = costs.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            stderr,
            samples: n,
        }
    }
}

/// Monte-Carlo cost `J_K` over one sample path per seed.
///
/// Passing the same seeds for two policies evaluates them on common random
/// numbers. Paths run in parallel; the reduction is ordered, so the result
/// does not depend on the thread count.
pub fn mc_cost<P: Policy + ?Sized>(
    cfg: &ModelConfig,
    policy: &P,
    x0: &[f64],
    seeds: &[u64],
) -> Result<CostEstimate> {
    if seeds.is_empty() {
        return Err(Error::invalid("mc_cost needs at least one seed"));
    }
    let h = cfg.h();
    let costs = seeds
        .par_iter()
        .map(|&s| {
            let noise = NoisePath::generate(s, cfg.steps, cfg.d, h, NoiseKind::Independent);
            simulate(cfg, policy, x0, &noise).map(|t| t.total_cost)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(CostEstimate::from_samples(&costs))
}

/// [`mc_cost`] over explicit noise paths (e.g. coarsened fine paths, so
/// different time meshes see the same Brownian motion).
pub fn mc_cost_paths<P: Policy + ?Sized>(
    cfg: &ModelConfig,
    policy: &P,
    x0: &[f64],
    paths: &[NoisePath],
) -> Result<CostEstimate> {
    if paths.is_empty() {
        return Err(Error::invalid("mc_cost needs at least one path"));
    }
    let costs = paths
        .par_iter()
        .map(|p| simulate(cfg, policy, x0, p).map(|t| t.total_cost))
        .collect::<Result<Vec<f64>>>()?;
    Ok(CostEstimate::from_samples(&costs))
}

/// Fraction of sample paths that ever leave the positive orthant.
pub fn negative_fraction<P: Policy + ?Sized>(
    cfg: &ModelConfig,
    policy: &P,
    x0: &[f64],
    seeds: &[u64],
) -> Result<f64> {
    let h = cfg.h();
    let hits = seeds
        .par_iter()
        .map(|&s| {
            let noise = NoisePath::generate(s, cfg.steps, cfg.d, h, NoiseKind::Independent);
            simulate(cfg, policy, x0, &noise).map(|t| t.any_negative() as usize)
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / seeds.len().max(1) as f64)
}
