use super::loss::Objective;
use crate::error::{Error, Result};

/// One row of an optimizer log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iteration: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub eval_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    /// Parameters with the lowest evaluation loss seen.
    pub theta: Vec<f64>,
    pub best_eval: f64,
    pub best_iteration: usize,
    pub history: Vec<IterRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamSettings {
    pub step: f64,
    pub m1: f64,
    pub m2: f64,
    pub eps: f64,
    pub iterations: usize,
    /// Evaluate (and possibly keep) the parameters every this many steps.
    pub eval_every: usize,
}

impl Default for AdamSettings {
    fn default() -> Self {
        Self {
            step: 0.001,
            m1: 0.9,
            m2: 0.999,
            eps: 1e-8,
            iterations: 1000,
            eval_every: 10,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// ADAM: for `n = 1, 2, ...`
///
/// ```text
/// g = grad J(theta)
/// p = m1 p + (1 - m1) g
/// q = m2 q + (1 - m2) g^2
/// p^ = p / (1 - m1^n)
/// q^ = q / (1 - m2^n)
/// theta -= step p^ / (sqrt(q^) + eps)
/// ```
pub fn adam(obj: &dyn Objective, theta0: &[f64], s: &AdamSettings) -> Result<TrainResult> {
    let n = obj.dim();
    if theta0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: theta0.len(),
        });
    }
    let mut theta = theta0.to_vec();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut best_eval = obj.eval_loss(&theta)?;
    let mut best = theta.clone();
    let mut best_iteration = 0;
    let mut history = Vec::with_capacity(s.iterations);
    let (mut c1, mut c2) = (1.0, 1.0);
    for it in 1..=s.iterations {
        let (loss, g) = obj.loss_grad(&theta, it)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        c1 *= s.m1;
        c2 *= s.m2;
        for k in 0..n {
            p[k] = s.m1 * p[k] + (1.0 - s.m1) * g[k];
            q[k] = s.m2 * q[k] + (1.0 - s.m2) * g[k] * g[k];
            let ph = p[k] / (1.0 - c1);
            let qh = q[k] / (1.0 - c2);
            theta[k] -= s.step * ph / (qh.sqrt() + s.eps);
        }
        let mut rec = IterRecord {
            iteration: it,
            loss,
            grad_norm: norm(&g),
            eval_loss: None,
        };
        if it % s.eval_every.max(1) == 0 || it == s.iterations {
            let e = obj.eval_loss(&theta)?;
            if !e.is_finite() {
                return Err(Error::NonFiniteLoss { iteration: it });
            }
            rec.eval_loss = Some(e);
            if e < best_eval {
                best_eval = e;
                best.copy_from_slice(&theta);
                best_iteration = it;
            }
        }
        log::debug!("adam {it}: loss {loss:.6e} |g| {:.3e}", rec.grad_norm);
        history.push(rec);
    }
    Ok(TrainResult {
        theta: best,
        best_eval,
        best_iteration,
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgSettings {
    pub max_iters: usize,
    /// Restart with steepest descent every this many steps; `None` uses
    /// the parameter count.
    pub restart_every: Option<usize>,
    pub grad_tol: f64,
    pub armijo: f64,
    pub max_halvings: usize,
}

impl Default for CgSettings {
    fn default() -> Self {
        Self {
            max_iters: 40,
            restart_every: None,
            grad_tol: 1e-10,
            armijo: 1e-4,
            max_halvings: 60,
        }
    }
}

/// Full-batch Polak-Ribiere (clipped at zero) nonlinear conjugate
/// gradient with an Armijo backtracking line search. The first trial step
/// is the minimizer of the quadratic through `phi(0)`, `phi'(0)` and one
/// probe value, so on a quadratic the search is exact.
///
/// `history` has one entry per accepted step (entry 0 is the start).
pub fn conjugate_gradient(obj: &dyn Objective, theta0: &[f64], s: &CgSettings) -> Result<TrainResult> {
    let n = obj.dim();
    if theta0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: theta0.len(),
        });
    }
    let restart_every = s.restart_every.unwrap_or(n).max(1);
    let mut theta = theta0.to_vec();
    let (mut f, mut g) = obj.loss_grad(&theta, 0)?;
    if !f.is_finite() {
        return Err(Error::NonFiniteLoss { iteration: 0 });
    }
    let mut history = vec![IterRecord {
        iteration: 0,
        loss: f,
        grad_norm: norm(&g),
        eval_loss: None,
    }];
    let mut dir: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut since_restart = 0;
    let mut prev_step: Option<(f64, f64)> = None;
    let mut trial = vec![0.0; n];
    let mut accepted = 0;
    while accepted < s.max_iters {
        if norm(&g) <= s.grad_tol {
            break;
        }
        let mut slope = dot(&g, &dir);
        let mut steepest = since_restart == 0;
        if slope >= 0.0 {
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
            since_restart = 0;
            steepest = true;
        }
        let probe = match prev_step {
            Some((alpha, prev_slope)) if !steepest => alpha * prev_slope / slope,
            _ => 1.0 / norm(&dir),
        };
        let probe = if probe.is_finite() && probe > 0.0 {
            probe
        } else {
            1.0 / norm(&dir)
        };
        let at = |alpha: f64, trial: &mut Vec<f64>| {
            for k in 0..n {
                trial[k] = theta[k] + alpha * dir[k];
            }
            obj.loss(trial, 0)
        };
        let f_probe = at(probe, &mut trial)?;
        let curv = (f_probe - f - slope * probe) / (probe * probe);
        let mut alpha = if curv > 0.0 && curv.is_finite() {
            -slope / (2.0 * curv)
        } else {
            probe
        };
        let mut found = None;
        for _ in 0..=s.max_halvings {
            let fa = at(alpha, &mut trial)?;
            if fa.is_finite() && fa <= f + s.armijo * alpha * slope {
                found = Some(fa);
                break;
            }
            alpha *= 0.5;
        }
        if found.is_none() && f_probe.is_finite() && f_probe <= f + s.armijo * probe * slope {
            alpha = probe;
            at(alpha, &mut trial)?;
            found = Some(f_probe);
        }
        if found.is_none() {
            if steepest {
                log::debug!("cg: line search failed along steepest descent; stopping");
                break;
            }
            since_restart = 0;
            prev_step = None;
            dir = g.iter().map(|v| -v).collect();
            continue;
        }
        theta.copy_from_slice(&trial);
        let (f_new, g_new) = obj.loss_grad(&theta, 0)?;
        if !f_new.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: accepted + 1 });
        }
        accepted += 1;
        since_restart += 1;
        let gg = dot(&g, &g);
        let beta = if since_restart >= restart_every || gg == 0.0 {
            since_restart = 0;
            0.0
        } else {
            (dot(&g_new, &g_new) - dot(&g_new, &g)).max(0.0) / gg
        };
        if beta == 0.0 {
            since_restart = 0;
        }
        for k in 0..n {
            dir[k] = -g_new[k] + beta * dir[k];
        }
        prev_step = Some((alpha, slope));
        f = f_new;
        g = g_new;
        history.push(IterRecord {
            iteration: accepted,
            loss: f,
            grad_norm: norm(&g),
            eval_loss: None,
        });
        log::debug!("cg {accepted}: loss {f:.6e} |g| {:.3e}", norm(&g));
    }
    let best_eval = obj.eval_loss(&theta)?;
    if let Some(last) = history.last_mut() {
        last.eval_loss = Some(best_eval);
    }
    Ok(TrainResult {
        theta,
        best_eval,
        best_iteration: accepted,
        history,
    })
}
