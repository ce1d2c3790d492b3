//! Feedback policies `u(X, t)`.
//!
//! Every solver hands back something implementing [`Policy`]; the
//! simulator, the cost estimator and the CLI only ever see the trait.

use std::sync::Arc;

/// What stands behind a policy's values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backing {
    Grid,
    Network,
    Constant,
    AnalyticOracle,
}

/// A Markovian feedback control with values in `[u_min, u_max]^d`.
///
/// Implementors provide [`Policy::raw_control`]; callers use
/// [`Policy::control`], which clamps to the bounds so the output is
/// feasible for every input, including states outside a solver's grid.
pub trait Policy: Send + Sync {
    fn dim(&self) -> usize;
    fn bounds(&self) -> (f64, f64);
    fn backing(&self) -> Backing;
    fn raw_control(&self, x: &[f64], t: f64, out: &mut [f64]);

    fn control(&self, x: &[f64], t: f64, out: &mut [f64]) {
        self.raw_control(x, t, out);
        let (lo, hi) = self.bounds();
        for u in out.iter_mut() {
            *u = u.clamp(lo, hi);
        }
    }

    fn control_vec(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.control(x, t, &mut out);
        out
    }
}

impl<P: Policy + ?Sized> Policy for Arc<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn bounds(&self) -> (f64, f64) {
        (**self).bounds()
    }
    fn backing(&self) -> Backing {
        (**self).backing()
    }
    fn raw_control(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (**self).raw_control(x, t, out)
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn bounds(&self) -> (f64, f64) {
        (**self).bounds()
    }
    fn backing(&self) -> Backing {
        (**self).backing()
    }
    fn raw_control(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (**self).raw_control(x, t, out)
    }
}

/// The same control everywhere. `u == u_max` is the no-quota policy.
#[derive(Debug, Clone)]
pub struct ConstantPolicy {
    pub value: Vec<f64>,
    pub u_min: f64,
    pub u_max: f64,
}

impl ConstantPolicy {
    pub fn new(d: usize, value: f64, u_min: f64, u_max: f64) -> Self {
        Self {
            value: vec![value; d],
            u_min,
            u_max,
        }
    }

    pub fn no_quota(d: usize, u_min: f64, u_max: f64) -> Self {
        Self::new(d, u_max, u_min, u_max)
    }
}

impl Policy for ConstantPolicy {
    fn dim(&self) -> usize {
        self.value.len()
    }
    fn bounds(&self) -> (f64, f64) {
        (self.u_min, self.u_max)
    }
    fn backing(&self) -> Backing {
        Backing::Constant
    }
    fn raw_control(&self, _x: &[f64], _t: f64, out: &mut [f64]) {
        out.copy_from_slice(&self.value);
    }
}

/// Wraps a closure; used by tests and by analytic fixtures.
pub struct FnPolicy<F> {
    pub d: usize,
    pub u_min: f64,
    pub u_max: f64,
    pub f: F,
}

impl<F> Policy for FnPolicy<F>
where
    F: Fn(&[f64], f64, &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.d
    }
    fn bounds(&self) -> (f64, f64) {
        (self.u_min, self.u_max)
    }
    fn backing(&self) -> Backing {
        Backing::AnalyticOracle
    }
    fn raw_control(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (self.f)(x, t, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_is_clamped() {
        let p = ConstantPolicy::new(2, 3.0, 0.5, 1.0);
        assert_eq!(p.control_vec(&[1.0, 1.0], 0.0), vec![1.0, 1.0]);
        let p = ConstantPolicy::new(1, 0.1, 0.5, 1.0);
        assert_eq!(p.control_vec(&[1.0], 0.0), vec![0.5]);
    }

    #[test]
    fn fn_policy_clamps_wild_values() {
        let p = FnPolicy {
            d: 1,
            u_min: 0.5,
            u_max: 1.0,
            f: |x: &[f64], _t: f64, out: &mut [f64]| out[0] = 100.0 * x[0] - 50.0,
        };
        for x in [-10.0, 0.0, 0.5, 0.51, 1e6] {
            let u = p.control_vec(&[x], 0.0)[0];
            assert!((0.5..=1.0).contains(&u));
        }
    }
}
