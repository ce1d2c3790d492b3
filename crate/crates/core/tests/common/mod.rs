//! Independent reference computations shared by the integration suites.
#![allow(dead_code)]

use fishquota::model::ModelConfig;
use fishquota::nn::{loss, loss_grad, draw_samples, BatchConfig, NetSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Piecewise-linear interpolation on nodes `k * dx`, continued linearly
/// outside the node range.
pub fn pl_interp(values: &[f64], dx: f64, x: f64) -> f64 {
    let n = values.len();
    let s = x / dx;
    let k = if s <= 0.0 {
        0
    } else {
        (s.floor() as usize).min(n - 2)
    };
    let w = s - k as f64;
    values[k] * (1.0 - w) + values[k + 1] * w
}

/// Deterministic dynamic programme (no noise, no control costs) solved by
/// direct recursion over every control level at every stage, with no
/// memoization: the nodal value at step `m` is rebuilt from scratch by
/// re-enumerating all later stages.
pub struct BruteForceDp<'a> {
    pub cfg: &'a ModelConfig,
    pub dx: f64,
    pub nodes: usize,
    pub levels: Vec<f64>,
}

impl<'a> BruteForceDp<'a> {
    pub fn new(cfg: &'a ModelConfig, intervals: usize, length: f64, n_levels: usize) -> Self {
        let levels = (0..n_levels)
            .map(|k| cfg.u_min + (cfg.u_max - cfg.u_min) * k as f64 / (n_levels - 1) as f64)
            .collect();
        Self {
            cfg,
            dx: length / intervals as f64,
            nodes: intervals + 1,
            levels,
        }
    }

    /// Value at an arbitrary state `x` and step `m`.
    pub fn value(&self, m: usize, x: f64) -> f64 {
        let cfg = self.cfg;
        if m == cfg.steps {
            return 0.0;
        }
        let h = cfg.h();
        let next: Vec<f64> = (0..self.nodes).map(|k| self.value(m + 1, k as f64 * self.dx)).collect();
        self.levels
            .iter()
            .map(|&u| {
                let y = x + h * x * (cfg.r[0] - cfg.kappa[0] * x - u);
                h * (y - cfg.x_desired[0]).powi(2) + pl_interp(&next, self.dx, y)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Largest relative discrepancy between the analytic loss gradient and
/// central differences over `coords` random parameters.
pub fn gradient_fd_error(cfg: &ModelConfig, hidden: &[usize], coords: usize, seed: u64) -> f64 {
    let spec = NetSpec::new(cfg.d, hidden, cfg.u_min, cfg.u_max, 3.0, cfg.horizon).unwrap();
    let mut params = spec.init(seed);
    for v in &mut params.data {
        *v *= 3.0;
    }
    let bc = BatchConfig {
        seed,
        ..Default::default()
    };
    let batch = draw_samples(cfg, &bc, 1, 4);
    let (_, g) = loss_grad(&spec, &params, cfg, &batch).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let k = rng.random_range(0..spec.param_count());
        let eps = 1e-5;
        let mut p = params.clone();
        p.data[k] += eps;
        let fp = loss(&spec, &p, cfg, &batch).unwrap();
        p.data[k] -= 2.0 * eps;
        let fm = loss(&spec, &p, cfg, &batch).unwrap();
        let fd = (fp - fm) / (2.0 * eps);
        worst = worst.max((fd - g[k]).abs() / g[k].abs().max(1e-6));
    }
    worst
}

/// Gaussian moments of a one-dimensional quantizer: weight sum, mean and
/// second moment.
pub fn quantizer_moments(nodes: &[f64], weights: &[f64]) -> (f64, f64, f64) {
    let sum: f64 = weights.iter().sum();
    let mean: f64 = nodes.iter().zip(weights).map(|(x, w)| w * x).sum();
    let m2: f64 = nodes.iter().zip(weights).map(|(x, w)| w * x * x).sum();
    (sum, mean, m2)
}

/// Switch points of the lift of a step at `y*` along a slice: solves
/// `(kappa X)_j = y*` for the free coordinate by hand.
pub fn hand_thresholds(kappa: &[f64], d: usize, axis: usize, fixed: &[f64], y_star: f64) -> Vec<Option<f64>> {
    (0..d)
        .map(|j| {
            let row = &kappa[j * d..(j + 1) * d];
            let c = row[axis];
            if c == 0.0 {
                return None;
            }
            let rest: f64 = (0..d).filter(|&i| i != axis).map(|i| row[i] * fixed[i]).sum();
            Some((y_star - rest) / c)
        })
        .collect()
}
