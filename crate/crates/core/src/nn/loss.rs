use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::net::{backward_into, forward_into, Activations, Layer, NetParams, NetSpec};
use crate::error::{check_len, Error, Result};
use crate::model::{ModelConfig, NoiseKind, NoisePath};

/// One training path: a starting state and its Brownian increments.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x0: Vec<f64>,
    pub noise: NoisePath,
}

/// Path loss
///
/// ```text
/// sum_{m=1..M} h |X^m - X_d|^2 - h alpha.u^m + beta |u^m - u^{m-1}|^2
/// ```
///
/// for states and controls laid out `(M + 1) x d`.
pub fn path_loss(cfg: &ModelConfig, states: &[f64], controls: &[f64]) -> f64 {
    let d = cfg.d;
    let h = cfg.h();
    let mut acc = 0.0;
    for m in 1..=cfg.steps {
        let x = &states[m * d..(m + 1) * d];
        let u = &controls[m * d..(m + 1) * d];
        let up = &controls[(m - 1) * d..m * d];
        for i in 0..d {
            let e = x[i] - cfg.x_desired[i];
            let du = u[i] - up[i];
            acc += h * e * e - h * cfg.alpha[i] * u[i] + cfg.beta * du * du;
        }
    }
    acc
}

/// Reverse sweep through the Euler recursion. `feedback(m, g_u, g_x)`
/// receives the total sensitivity to `u^m` and adds the sensitivity it
/// induces on `X^m` (zero for open-loop controls). Returns the
/// sensitivities to every `u^m`.
fn reverse_sweep(
    cfg: &ModelConfig,
    states: &[f64],
    controls: &[f64],
    noise: &NoisePath,
    mut feedback: impl FnMut(usize, &[f64], &mut [f64]),
) -> Vec<f64> {
    let d = cfg.d;
    let h = cfg.h();
    let m_steps = cfg.steps;
    let mut g_next = vec![0.0; d];
    let mut g_cur = vec![0.0; d];
    let mut g_u = vec![0.0; d];
    let mut g_fb = vec![0.0; d];
    let mut g_us = vec![0.0; (m_steps + 1) * d];
    for m in (0..=m_steps).rev() {
        let x = &states[m * d..(m + 1) * d];
        let u = |k: usize, i: usize| controls[k * d + i];
        for i in 0..d {
            let mut g = 0.0;
            if m >= 1 {
                g += -h * cfg.alpha[i] + 2.0 * cfg.beta * (u(m, i) - u(m - 1, i));
            }
            if m < m_steps {
                g += -2.0 * cfg.beta * (u(m + 1, i) - u(m, i));
                g += -h * x[i] * g_next[i];
            }
            g_u[i] = g;
        }
        g_us[m * d..(m + 1) * d].copy_from_slice(&g_u);
        for j in 0..d {
            g_cur[j] = if m >= 1 {
                2.0 * h * (x[j] - cfg.x_desired[j])
            } else {
                0.0
            };
        }
        if m < m_steps {
            let dw = noise.step(m);
            for i in 0..d {
                let row = cfg.kappa_row(i);
                let kx: f64 = row.iter().zip(x).map(|(k, v)| k * v).sum();
                let gi = g_next[i];
                g_cur[i] += gi * (1.0 + (cfg.r[i] - u(m, i) - kx) * h + cfg.sigma[i] * dw[i]);
                for j in 0..d {
                    g_cur[j] -= gi * h * x[i] * row[j];
                }
            }
        }
        g_fb.iter_mut().for_each(|v| *v = 0.0);
        feedback(m, &g_u, &mut g_fb);
        for j in 0..d {
            g_cur[j] += g_fb[j];
        }
        std::mem::swap(&mut g_next, &mut g_cur);
    }
    g_us
}

/// Sensitivity of [`path_loss`] to each `u^m` when the controls are
/// fixed numbers rather than a feedback law.
pub fn open_loop_gradient(cfg: &ModelConfig, x0: &[f64], controls: &[f64], noise: &NoisePath) -> Result<(f64, Vec<f64>)> {
    let d = cfg.d;
    check_len(d, x0.len())?;
    check_len((cfg.steps + 1) * d, controls.len())?;
    let h = cfg.h();
    let mut states = vec![0.0; (cfg.steps + 1) * d];
    states[..d].copy_from_slice(x0);
    for m in 0..cfg.steps {
        let (done, rest) = states.split_at_mut((m + 1) * d);
        crate::model::euler_step_into(cfg, &done[m * d..], &controls[m * d..(m + 1) * d], noise.step(m), h, &mut rest[..d]);
    }
    let g = reverse_sweep(cfg, &states, controls, noise, |_, _, _| {});
    Ok((path_loss(cfg, &states, controls), g))
}

struct PathWork {
    states: Vec<f64>,
    controls: Vec<f64>,
    caches: Vec<Activations>,
    scratch: (Vec<f64>, Vec<f64>),
}

impl PathWork {
    fn new(spec: &NetSpec, cfg: &ModelConfig) -> Self {
        let n = (cfg.steps + 1) * cfg.d;
        Self {
            states: vec![0.0; n],
            controls: vec![0.0; n],
            caches: (0..=cfg.steps).map(|_| Activations::new(spec)).collect(),
            scratch: (Vec::new(), Vec::new()),
        }
    }
}

fn run_path(
    spec: &NetSpec,
    layers: &[Layer],
    params: &[f64],
    cfg: &ModelConfig,
    sample: &Sample,
    work: &mut PathWork,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    let d = cfg.d;
    let h = cfg.h();
    work.states[..d].copy_from_slice(&sample.x0);
    for m in 0..=cfg.steps {
        let (done, rest) = work.states.split_at_mut((m + 1) * d);
        let x = &done[m * d..];
        let u = &mut work.controls[m * d..(m + 1) * d];
        forward_into(spec, layers, params, x, cfg.time(m), &mut work.caches[m], u);
        if m < cfg.steps {
            let next = &mut rest[..d];
            crate::model::euler_step_into(cfg, x, u, sample.noise.step(m), h, next);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::SimulationDiverged { step: m + 1 });
            }
        }
    }
    let loss = path_loss(cfg, &work.states, &work.controls);
    if let Some(grad) = grad {
        let PathWork {
            states,
            controls,
            caches,
            scratch,
        } = work;
        reverse_sweep(cfg, states, controls, &sample.noise, |m, g_u, g_x| {
            backward_into(spec, layers, params, &caches[m], g_u, grad, g_x, scratch);
        });
    }
    Ok(loss)
}

const CHUNK: usize = 4;

fn batch_eval(spec: &NetSpec, params: &NetParams, cfg: &ModelConfig, batch: &[Sample], with_grad: bool) -> Result<(f64, Vec<f64>)> {
    spec.validate()?;
    check_len(spec.param_count(), params.data.len())?;
    check_len(cfg.d, spec.dim())?;
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    for s in batch {
        check_len(cfg.d, s.x0.len())?;
        check_len(cfg.steps, s.noise.steps)?;
        check_len(cfg.d, s.noise.d)?;
    }
    if let Some(i) = params.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteParameter(i));
    }
    let layers = spec.layers();
    let n = spec.param_count();
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut work = PathWork::new(spec, cfg);
            let mut grad = if with_grad { vec![0.0; n] } else { Vec::new() };
            let mut loss = 0.0;
            for s in chunk {
                let g = with_grad.then_some(grad.as_mut_slice());
                loss += run_path(spec, &layers, &params.data, cfg, s, &mut work, g)?;
            }
            Ok((loss, grad))
        })
        .collect::<Result<_>>()?;
    let k = batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = if with_grad { vec![0.0; n] } else { Vec::new() };
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|g| *g /= k);
    Ok((loss / k, grad))
}

/// Batch-averaged path loss of the network policy.
pub fn loss(spec: &NetSpec, params: &NetParams, cfg: &ModelConfig, batch: &[Sample]) -> Result<f64> {
    batch_eval(spec, params, cfg, batch, false).map(|p| p.0)
}

/// Batch-averaged loss and its exact gradient, by reverse-mode
/// differentiation through the network and the Euler recursion.
/// Chunks are summed in a fixed order, so the result does not depend on
/// the thread count.
pub fn loss_grad(spec: &NetSpec, params: &NetParams, cfg: &ModelConfig, batch: &[Sample]) -> Result<(f64, Vec<f64>)> {
    batch_eval(spec, params, cfg, batch, true)
}

/// A differentiable training target for the optimizers.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    /// Loss and gradient on the batch of the given iteration; stochastic
    /// objectives draw a fresh batch per iteration.
    fn loss_grad(&self, theta: &[f64], iteration: usize) -> Result<(f64, Vec<f64>)>;
    fn loss(&self, theta: &[f64], iteration: usize) -> Result<f64> {
        self.loss_grad(theta, iteration).map(|p| p.0)
    }
    /// Loss on a fixed evaluation set, used to pick the returned parameters.
    fn eval_loss(&self, theta: &[f64]) -> Result<f64> {
        self.loss(theta, 0)
    }
}

/// Where minibatches come from.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchConfig {
    pub batch: usize,
    pub eval_batch: usize,
    /// Initial states are drawn uniformly from `[low, high]^d`.
    pub x0_low: f64,
    pub x0_high: f64,
    pub seed: u64,
    /// Reuse one batch for every iteration (full-batch optimizers).
    pub fixed: bool,
    pub noise: NoiseKind,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            batch: 32,
            eval_batch: 256,
            x0_low: 0.2,
            x0_high: 2.0,
            seed: 1,
            fixed: false,
            noise: NoiseKind::Independent,
        }
    }
}

/// Draws `count` samples from stream `stream` of the seeded generator.
pub fn draw_samples(cfg: &ModelConfig, bc: &BatchConfig, stream: u64, count: usize) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(bc.seed);
    rng.set_stream(stream);
    (0..count)
        .map(|_| {
            let x0 = (0..cfg.d).map(|_| rng.random_range(bc.x0_low..=bc.x0_high)).collect();
            let seed = rng.next_u64();
            Sample {
                x0,
                noise: NoisePath::generate(seed, cfg.steps, cfg.d, cfg.h(), bc.noise),
            }
        })
        .collect()
}

/// The simulated-cost objective of a network policy.
pub struct PolicyObjective {
    pub cfg: ModelConfig,
    pub spec: NetSpec,
    pub batches: BatchConfig,
    eval: Vec<Sample>,
    fixed: Option<Vec<Sample>>,
}

const EVAL_STREAM: u64 = u64::MAX;

impl PolicyObjective {
    pub fn new(cfg: ModelConfig, spec: NetSpec, batches: BatchConfig) -> Result<Self> {
        cfg.validate()?;
        spec.validate()?;
        check_len(cfg.d, spec.dim())?;
        if batches.batch == 0 || batches.eval_batch == 0 {
            return Err(Error::invalid("batch sizes must be positive"));
        }
        if !(batches.x0_low <= batches.x0_high) {
            return Err(Error::invalid("empty initial-state range"));
        }
        let eval = draw_samples(&cfg, &batches, EVAL_STREAM, batches.eval_batch);
        let fixed = batches.fixed.then(|| draw_samples(&cfg, &batches, 0, batches.batch));
        Ok(Self {
            cfg,
            spec,
            batches,
            eval,
            fixed,
        })
    }

    pub fn batch(&self, iteration: usize) -> Vec<Sample> {
        match &self.fixed {
            Some(b) => b.clone(),
            None => draw_samples(&self.cfg, &self.batches, iteration as u64 + 1, self.batches.batch),
        }
    }

    fn params(theta: &[f64]) -> NetParams {
        NetParams { data: theta.to_vec() }
    }
}

impl Objective for PolicyObjective {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn loss_grad(&self, theta: &[f64], iteration: usize) -> Result<(f64, Vec<f64>)> {
        let batch;
        let b = match &self.fixed {
            Some(b) => b.as_slice(),
            None => {
                batch = self.batch(iteration);
                batch.as_slice()
            }
        };
        loss_grad(&self.spec, &Self::params(theta), &self.cfg, b)
    }

    fn loss(&self, theta: &[f64], iteration: usize) -> Result<f64> {
        let batch;
        let b = match &self.fixed {
            Some(b) => b.as_slice(),
            None => {
                batch = self.batch(iteration);
                batch.as_slice()
            }
        };
        loss(&self.spec, &Self::params(theta), &self.cfg, b)
    }

    fn eval_loss(&self, theta: &[f64]) -> Result<f64> {
        loss(&self.spec, &Self::params(theta), &self.cfg, &self.eval)
    }
}
