//! Checks built on the interaction matrix: lifting a scalar policy to
//! several species, the exact commutation test, predicted switch lines,
//! and common-random-number cost tables.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::model::{mc_cost, sample_seeds, simulate, CostEstimate, ModelConfig, NoiseKind, NoisePath};
use crate::policy::{Backing, Policy};

/// A scalar feedback `v(y, t)` together with the interaction matrix it is
/// lifted through.
#[derive(Clone)]
pub struct OracleSpec {
    pub d: usize,
    /// Row-major `d x d`.
    pub kappa: Vec<f64>,
    pub one_d: Arc<dyn Policy>,
    pub y_target: f64,
    pub common_noise: bool,
    /// 2-norm condition number of `kappa`.
    pub condition: f64,
}

impl std::fmt::Debug for OracleSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OracleSpec")
            .field("d", &self.d)
            .field("kappa", &self.kappa)
            .field("y_target", &self.y_target)
            .field("common_noise", &self.common_noise)
            .field("condition", &self.condition)
            .finish()
    }
}

impl OracleSpec {
    pub fn new(kappa: Vec<f64>, one_d: Arc<dyn Policy>, y_target: f64, common_noise: bool) -> Result<Self> {
        let d = (kappa.len() as f64).sqrt().round() as usize;
        if d == 0 || d * d != kappa.len() {
            return Err(Error::invalid("kappa must be a square matrix"));
        }
        if one_d.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: one_d.dim(),
            });
        }
        let m = DMatrix::from_row_slice(d, d, &kappa);
        let sv = m.singular_values();
        let smin = sv.min();
        if !(smin > 1e-12 * sv.max()) {
            return Err(Error::invalid("kappa is singular"));
        }
        Ok(Self {
            d,
            kappa,
            one_d,
            y_target,
            common_noise,
            condition: sv.max() / smin,
        })
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.d, self.d, &self.kappa)
    }

    /// `kappa^{-1} (y 1)`.
    pub fn state_for(&self, y: f64) -> Vec<f64> {
        let b = DVector::from_element(self.d, y);
        self.matrix()
            .lu()
            .solve(&b)
            .expect("kappa checked invertible")
            .iter()
            .copied()
            .collect()
    }
}

/// `u_i(X, t) = v((kappa X)_i, t)`.
#[derive(Clone)]
pub struct LiftedPolicy {
    spec: OracleSpec,
}

pub fn lift_policy(spec: &OracleSpec) -> LiftedPolicy {
    LiftedPolicy { spec: spec.clone() }
}

impl Policy for LiftedPolicy {
    fn dim(&self) -> usize {
        self.spec.d
    }
    fn bounds(&self) -> (f64, f64) {
        self.spec.one_d.bounds()
    }
    fn backing(&self) -> Backing {
        Backing::AnalyticOracle
    }
    fn raw_control(&self, x: &[f64], t: f64, out: &mut [f64]) {
        let d = self.spec.d;
        let mut v = [0.0];
        for i in 0..d {
            let y: f64 = self.spec.kappa[i * d..(i + 1) * d].iter().zip(x).map(|(k, xj)| k * xj).sum();
            self.spec.one_d.control(&[y], t, &mut v);
            out[i] = v[0];
        }
    }
}

/// The scalar problem matching `cfg`: same rates, noise, weights and
/// time mesh, unit self-interaction and target `y_target`.
pub fn reference_config(cfg: &ModelConfig, y_target: f64) -> ModelConfig {
    ModelConfig {
        d: 1,
        r: vec![cfg.r[0]],
        kappa: vec![1.0],
        sigma: vec![cfg.sigma[0]],
        alpha: vec![cfg.alpha[0]],
        x_desired: vec![y_target],
        ..cfg.clone()
    }
}

/// Simulates the lifted `d`-species system from `kappa^{-1}(y0 1)` and the
/// scalar reference from `y0` on the same Brownian path, and returns
/// `max_{m,i} |(kappa X^m)_i - y^m|`.
///
/// `noise` selects common or independent increments across species; the
/// scalar path always uses the first species' increments.
pub fn verify_commutation(cfg: &ModelConfig, spec: &OracleSpec, y0: f64, seed: u64, noise: NoiseKind) -> Result<f64> {
    cfg.validate()?;
    check_len(cfg.d, spec.d)?;
    if cfg.kappa != spec.kappa {
        return Err(Error::invalid("model and oracle use different interaction matrices"));
    }
    if cfg.sigma.iter().any(|&s| s != cfg.sigma[0]) || cfg.r.iter().any(|&r| r != cfg.r[0]) {
        return Err(Error::invalid("commutation needs equal growth rates and volatilities"));
    }
    if noise == NoiseKind::Common && !spec.common_noise {
        return Err(Error::invalid("oracle spec is not flagged for common noise"));
    }
    let d = cfg.d;
    let path = NoisePath::generate(seed, cfg.steps, d, cfg.h(), noise);
    let scalar: Vec<f64> = (0..cfg.steps).map(|m| path.step(m)[0]).collect();
    let path_1d = NoisePath::from_increments(scalar, cfg.steps, 1)?;

    let lifted = lift_policy(spec);
    let x0 = spec.state_for(y0);
    let big = simulate(cfg, &lifted, &x0, &path)?;
    let small = simulate(&reference_config(cfg, spec.y_target), &*spec.one_d, &[y0], &path_1d)?;

    let mut worst = 0.0f64;
    let mut y = vec![0.0; d];
    for m in 0..=cfg.steps {
        cfg.kappa_times(big.state(m), &mut y);
        let ym = small.state(m)[0];
        for yi in &y {
            worst = worst.max((yi - ym).abs());
        }
    }
    Ok(worst)
}

/// Where component `j` of a lifted bang-bang policy switches along a line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// `(kappa X)_j = y*` at this value of the free coordinate; `rising`
    /// when `(kappa X)_j` increases with it.
    Switch { at: f64, rising: bool },
    /// `(kappa X)_j` does not depend on the free coordinate.
    Constant { y: f64 },
    /// The crossing exists but lies outside `(0, L)`.
    Outside { at: f64 },
}

/// For the line through `fixed` along `axis`, solves `(kappa X)_j = y_star`
/// for the free coordinate, one entry per component `j`.
pub fn predict_thresholds(kappa: &[f64], axis: usize, fixed: &[f64], y_star: f64, length: f64) -> Result<Vec<Threshold>> {
    let d = fixed.len();
    check_len(d * d, kappa.len())?;
    if axis >= d {
        return Err(Error::invalid("slice axis out of range"));
    }
    Ok((0..d)
        .map(|j| {
            let row = &kappa[j * d..(j + 1) * d];
            let rest: f64 = (0..d).filter(|&k| k != axis).map(|k| row[k] * fixed[k]).sum();
            let c = row[axis];
            if c == 0.0 {
                Threshold::Constant { y: rest }
            } else {
                let at = (y_star - rest) / c;
                if at > 0.0 && at < length {
                    Threshold::Switch { at, rising: c > 0.0 }
                } else {
                    Threshold::Outside { at }
                }
            }
        })
        .collect())
}

/// Where a scalar policy crosses the middle of its range at time `t`,
/// searched on `[lo, hi]`: the first upward crossing on a 1000-cell scan,
/// refined by bisection. `None` when it never crosses upward.
pub fn switch_point(policy: &dyn Policy, t: f64, lo: f64, hi: f64) -> Option<f64> {
    let (a, b) = policy.bounds();
    let mid = 0.5 * (a + b);
    let f = |y: f64| policy.control_vec(&[y], t)[0] - mid;
    let n = 1000;
    let mut prev = (lo, f(lo));
    for k in 1..=n {
        let y = lo + (hi - lo) * k as f64 / n as f64;
        let fy = f(y);
        if prev.1 < 0.0 && fy >= 0.0 {
            let (mut l, mut r) = (prev.0, y);
            for _ in 0..60 {
                let c = 0.5 * (l + r);
                if f(c) < 0.0 {
                    l = c;
                } else {
                    r = c;
                }
            }
            return Some(0.5 * (l + r));
        }
        prev = (y, fy);
    }
    None
}

/// One cell of a cost table.
#[derive(Debug, Clone, PartialEq)]
pub struct CostCell {
    pub x0: Vec<f64>,
    pub policy: String,
    pub result: std::result::Result<CostEstimate, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostTable {
    pub cells: Vec<CostCell>,
}

impl CostTable {
    pub fn get(&self, policy: &str, x0: &[f64]) -> Option<&CostCell> {
        self.cells.iter().find(|c| c.policy == policy && c.x0 == x0)
    }

    /// Columns `X0 policy mean stderr`; a failed cell has `NaN` entries
    /// and its message on the following comment line. Multi-species
    /// starting points print as comma-separated components.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "X0\tpolicy\tmean\tstderr")?;
        for c in &self.cells {
            let x0 = c.x0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
            match &c.result {
                Ok(e) => writeln!(w, "{x0}\t{}\t{}\t{}", c.policy, e.mean, e.stderr)?,
                Err(msg) => {
                    writeln!(w, "{x0}\t{}\tNaN\tNaN", c.policy)?;
                    writeln!(w, "# {x0} {}: {msg}", c.policy)?;
                }
            }
        }
        Ok(())
    }
}

/// Monte-Carlo cost of every policy at every starting point, all on the
/// same `samples` noise paths drawn from `seed`.
pub fn compare_policies(
    cfg: &ModelConfig,
    policies: &[(String, Arc<dyn Policy>)],
    x0s: &[Vec<f64>],
    samples: usize,
    seed: u64,
) -> Result<CostTable> {
    if policies.is_empty() {
        return Err(Error::invalid("no policies to compare"));
    }
    let seeds = sample_seeds(seed, samples);
    let jobs: Vec<(&Vec<f64>, &(String, Arc<dyn Policy>))> =
        x0s.iter().flat_map(|x| policies.iter().map(move |p| (x, p))).collect();
    let cells = jobs
        .par_iter()
        .map(|(x0, (name, p))| CostCell {
            x0: x0.to_vec(),
            policy: name.clone(),
            result: mc_cost(cfg, &**p, x0, &seeds).map_err(|e| e.to_string()),
        })
        .collect();
    Ok(CostTable { cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::KAPPA_3;
    use crate::policy::{ConstantPolicy, FnPolicy};

    fn ramp() -> Arc<dyn Policy> {
        Arc::new(FnPolicy {
            d: 1,
            u_min: 0.5,
            u_max: 1.0,
            f: |y: &[f64], t: f64, out: &mut [f64]| out[0] = 0.75 + 2.0 * (y[0] - 1.0) + 0.05 * t,
        })
    }

    #[test]
    fn identity_lift() {
        let spec = OracleSpec::new(vec![1.0, 0.0, 0.0, 1.0], ramp(), 1.0, true).unwrap();
        let p = lift_policy(&spec);
        let u = p.control_vec(&[0.9, 1.1], 0.4);
        assert_eq!(u[0], ramp().control_vec(&[0.9], 0.4)[0]);
        assert_eq!(u[1], ramp().control_vec(&[1.1], 0.4)[0]);
    }

    #[test]
    fn equal_components_on_preimage_of_ones() {
        let spec = OracleSpec::new(KAPPA_3.to_vec(), ramp(), 1.0, true).unwrap();
        let x = spec.state_for(1.0);
        let u = lift_policy(&spec).control_vec(&x, 1.0);
        let want = ramp().control_vec(&[1.0], 1.0)[0];
        for ui in u {
            assert!((ui - want).abs() < 1e-14);
        }
        // hand-solved preimage of (1, 1, 1)
        assert!((x[0] - 1.3 / 1.46).abs() < 1e-12);
        assert!((x[1] - 1.0 / 1.46).abs() < 1e-12);
        assert!(spec.condition > 1.0 && spec.condition < 2.0);
    }

    #[test]
    fn singular_kappa_rejected() {
        assert!(OracleSpec::new(vec![1.0, 2.0, 2.0, 4.0], ramp(), 1.0, true).is_err());
    }

    #[test]
    fn commutation_is_exact_with_common_noise() {
        let cfg = ModelConfig::three_species();
        let spec = OracleSpec::new(KAPPA_3.to_vec(), ramp(), 1.0, true).unwrap();
        let dev = verify_commutation(&cfg, &spec, 0.8, 3, NoiseKind::Common).unwrap();
        assert!(dev < 1e-12, "{dev}");
        let dev = verify_commutation(&cfg, &spec, 0.8, 3, NoiseKind::Independent).unwrap();
        assert!(dev > 1e-3, "{dev}");
        let mut calm = cfg.clone();
        calm.sigma = vec![0.0; 3];
        let dev = verify_commutation(&calm, &spec, 1.3, 3, NoiseKind::Common).unwrap();
        assert!(dev < 1e-13);
    }

    #[test]
    fn thresholds_substitute_back() {
        let fixed = [0.0, 0.685, 0.839];
        let th = predict_thresholds(&KAPPA_3, 0, &fixed, 1.0, 3.0).unwrap();
        for (j, t) in th.iter().enumerate() {
            let Threshold::Switch { at, .. } = *t else { panic!("{t:?}") };
            let mut x = fixed;
            x[0] = at;
            let y: f64 = (0..3).map(|k| KAPPA_3[j * 3 + k] * x[k]).sum();
            assert!((y - 1.0).abs() < 1e-12);
        }
        let th = predict_thresholds(&KAPPA_3, 2, &[0.89, 0.685, 0.0], 1.0, 3.0).unwrap();
        assert!(matches!(th[0], Threshold::Constant { .. }));
        assert!(matches!(th[1], Threshold::Constant { .. }));
        let Threshold::Switch { at, rising } = th[2] else { panic!() };
        assert!((at - 0.8425).abs() < 1e-12 && rising);
    }

    #[test]
    fn switch_point_of_ramp() {
        // 0.75 + 2 (y - 1) + 0.05 t = 0.75 at y = 1 - 0.025 t
        let y = switch_point(&*ramp(), 1.0, 0.0, 3.0).unwrap();
        assert!((y - 0.975).abs() < 1e-10);
        let flat = ConstantPolicy::new(1, 1.0, 0.5, 1.0);
        assert_eq!(switch_point(&flat, 1.0, 0.0, 3.0), None);
    }

    #[test]
    fn duplicate_policies_give_identical_columns() {
        let cfg = ModelConfig::single_species();
        let p: Arc<dyn Policy> = ramp();
        let list = vec![("a".to_string(), p.clone()), ("b".to_string(), p)];
        let x0s = vec![vec![0.7], vec![1.2]];
        let t = compare_policies(&cfg, &list, &x0s, 20, 5).unwrap();
        for x in &x0s {
            assert_eq!(t.get("a", x).unwrap().result, t.get("b", x).unwrap().result);
        }
        let rev: Vec<_> = list.iter().rev().cloned().collect();
        let t2 = compare_policies(&cfg, &rev, &x0s, 20, 5).unwrap();
        assert_eq!(t.get("a", &[0.7]).unwrap(), t2.get("a", &[0.7]).unwrap());
    }
}
