//! Quadrature grids for expectations over standard normal noise.
//!
//! One-dimensional grids are stationary quantizers of `N(0, 1)`: every node
//! is the conditional mean of its Voronoi cell and every weight is the
//! probability of that cell. Multi-dimensional grids are tensor products.
//!
//! Grid files are TSV, one node per line: `z_1 ... z_d w`. Lines starting
//! with `#` and blank lines are ignored.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100_000;
const MOVE_TOL: f64 = 1e-12;
const TAIL: f64 = 40.0;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantGrid {
    /// `order x dim`, row-major.
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub dim: usize,
    pub order: usize,
}

impl QuantGrid {
    pub fn node(&self, q: usize) -> &[f64] {
        &self.nodes[q * self.dim..(q + 1) * self.dim]
    }

    /// `sum_q w_q f(z_q)`.
    pub fn expect<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(q, w)| w * f(self.node(q)))
            .sum()
    }

    fn check(&self) -> Result<()> {
        if self.weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("quadrature weights must be finite and nonnegative"));
        }
        if self.nodes.iter().any(|z| !z.is_finite()) {
            return Err(Error::invalid("quadrature nodes must be finite"));
        }
        Ok(())
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# quantization grid: dim {} order {}", self.dim, self.order)?;
        for q in 0..self.order {
            for z in self.node(q) {
                write!(w, "{z}\t")?;
            }
            writeln!(w, "{}", self.weights[q])?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_tsv(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Upper tail `P(Z > x)`, accurate in both tails.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// `P(a < Z <= b)` without cancellation in the tails.
fn normal_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        normal_sf(a) - normal_sf(b)
    } else if b <= 0.0 {
        normal_sf(-b) - normal_sf(-a)
    } else {
        1.0 - normal_sf(-a) - normal_sf(b)
    }
}

fn cell_bounds(nodes: &[f64], q: usize) -> (f64, f64) {
    let lo = if q == 0 {
        f64::NEG_INFINITY
    } else {
        0.5 * (nodes[q - 1] + nodes[q])
    };
    let hi = if q + 1 == nodes.len() {
        f64::INFINITY
    } else {
        0.5 * (nodes[q] + nodes[q + 1])
    };
    (lo, hi)
}

/// Conditional mean and probability of `Z` on `(a, b]`, in closed form.
fn cell_moments(a: f64, b: f64) -> (f64, f64) {
    let mass = normal_mass(a, b);
    let pa = if a.is_finite() { normal_pdf(a) } else { 0.0 };
    let pb = if b.is_finite() { normal_pdf(b) } else { 0.0 };
    ((pa - pb) / mass, mass)
}

/// Stationary quantizer of `N(0, 1)` with `order` nodes, by Lloyd
/// fixed-point iteration.
pub fn generate_1d(order: usize) -> Result<QuantGrid> {
    if order == 0 {
        return Err(Error::invalid("quantizer order must be at least 1"));
    }
    let spread = if order == 1 {
        0.0
    } else {
        (2.0 * (order as f64).ln()).sqrt()
    };
    let mut nodes: Vec<f64> = (0..order)
        .map(|q| {
            if order == 1 {
                0.0
            } else {
                spread * (2.0 * q as f64 / (order - 1) as f64 - 1.0)
            }
        })
        .collect();
    let mut next = nodes.clone();
    let mut movement = f64::INFINITY;
    for _ in 0..MAX_SWEEPS {
        movement = 0.0;
        for q in 0..order {
            let (a, b) = cell_bounds(&nodes, q);
            next[q] = cell_moments(a, b).0;
            movement = f64::max(movement, (next[q] - nodes[q]).abs());
        }
        std::mem::swap(&mut nodes, &mut next);
        if movement < MOVE_TOL {
            break;
        }
    }
    if !(movement < MOVE_TOL) {
        return Err(Error::QuantizerFailed { residual: movement });
    }
    for q in 0..order / 2 {
        let z = 0.5 * (nodes[order - 1 - q] - nodes[q]);
        nodes[q] = -z;
        nodes[order - 1 - q] = z;
    }
    if order % 2 == 1 {
        nodes[order / 2] = 0.0;
    }
    let mut weights: Vec<f64> = (0..order)
        .map(|q| {
            let (a, b) = cell_bounds(&nodes, q);
            normal_mass(a, b)
        })
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(QuantGrid {
        nodes,
        weights,
        dim: 1,
        order,
    })
}

/// `d`-fold tensor product of a one-dimensional grid.
pub fn product_grid(g: &QuantGrid, d: usize) -> Result<QuantGrid> {
    if g.dim != 1 {
        return Err(Error::invalid("product_grid expects a one-dimensional grid"));
    }
    if d == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    let order = u32::try_from(d)
        .ok()
        .and_then(|d| g.order.checked_pow(d))
        .filter(|n| n.checked_mul(d).is_some())
        .ok_or_else(|| Error::invalid(format!("{}^{d} nodes overflows", g.order)))?;
    let mut nodes = Vec::with_capacity(order * d);
    let mut weights = Vec::with_capacity(order);
    let mut idx = vec![0usize; d];
    for _ in 0..order {
        let mut w = 1.0;
        for &i in &idx {
            nodes.push(g.nodes[i]);
            w *= g.weights[i];
        }
        weights.push(w);
        for slot in idx.iter_mut().rev() {
            *slot += 1;
            if *slot < g.order {
                break;
            }
            *slot = 0;
        }
    }
    Ok(QuantGrid {
        nodes,
        weights,
        dim: d,
        order,
    })
}

pub fn parse_grid(text: &str) -> Result<QuantGrid> {
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::GridFormat {
                line: i + 1,
                msg: e.to_string(),
            })?;
        if fields.len() < 2 {
            return Err(Error::GridFormat {
                line: i + 1,
                msg: "need at least one coordinate and a weight".into(),
            });
        }
        let d = fields.len() - 1;
        if *dim.get_or_insert(d) != d {
            return Err(Error::GridFormat {
                line: i + 1,
                msg: format!("expected {} columns, found {}", dim.unwrap() + 1, d + 1),
            });
        }
        nodes.extend_from_slice(&fields[..d]);
        weights.push(fields[d]);
    }
    let dim = dim.ok_or(Error::GridFormat {
        line: 0,
        msg: "no nodes".into(),
    })?;
    let grid = QuantGrid {
        order: weights.len(),
        nodes,
        weights,
        dim,
    };
    grid.check()?;
    let sum: f64 = grid.weights.iter().sum();
    if (sum - 1.0).abs() >= 1e-6 {
        return Err(Error::WeightSum { sum });
    }
    let mut grid = grid;
    if sum != 1.0 {
        grid.weights.iter_mut().for_each(|w| *w /= sum);
    }
    Ok(grid)
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<QuantGrid> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_grid(&text)
}

// Gauss-Kronrod 7-15 abscissae and weights on [-1, 1].
const GK_X: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GK_WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = GK_WK[7] * fc;
    let mut gauss = GK_WG[3] * fc;
    for j in 0..7 {
        let dx = r * GK_X[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += GK_WK[j] * s;
        if j % 2 == 1 {
            gauss += GK_WG[j / 2] * s;
        }
    }
    (kronrod * r, ((kronrod - gauss) * r).abs())
}

/// Adaptive Gauss-Kronrod quadrature of `f` over `[a, b]` to absolute
/// tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (value, err) = gk15(f, a, b);
        if err <= tol || depth >= 50 {
            return value;
        }
        let mid = 0.5 * (a + b);
        recurse(f, a, mid, 0.5 * tol, depth + 1) + recurse(f, mid, b, 0.5 * tol, depth + 1)
    }
    if b <= a {
        return 0.0;
    }
    recurse(&f, a, b, tol, 0)
}

fn clip_cell(a: f64, b: f64) -> (f64, f64) {
    (a.max(-TAIL), b.min(TAIL))
}

/// `max_q |z_q - E[Z | Z in cell_q]|` for a one-dimensional grid, with the
/// conditional means computed by numerical integration of the density.
pub fn stationarity_residual(g: &QuantGrid) -> f64 {
    assert_eq!(g.dim, 1, "stationarity is checked on 1D grids");
    (0..g.order)
        .map(|q| {
            let (a, b) = cell_bounds(&g.nodes, q);
            let (a, b) = clip_cell(a, b);
            let mass = integrate(normal_pdf, a, b, 1e-14);
            let first = integrate(|z| z * normal_pdf(z), a, b, 1e-14);
            (g.nodes[q] - first / mass).abs()
        })
        .fold(0.0, f64::max)
}

/// Mean squared quantization error `E[min_q (Z - z_q)^2]`, by numerical
/// integration.
pub fn distortion(g: &QuantGrid) -> f64 {
    assert_eq!(g.dim, 1, "distortion is computed on 1D grids");
    (0..g.order)
        .map(|q| {
            let (a, b) = cell_bounds(&g.nodes, q);
            let (a, b) = clip_cell(a, b);
            let z = g.nodes[q];
            integrate(|x| (x - z) * (x - z) * normal_pdf(x), a, b, 1e-14)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_one_is_the_mean() {
        let g = generate_1d(1).unwrap();
        assert_eq!(g.nodes, vec![0.0]);
        assert_eq!(g.weights, vec![1.0]);
    }

    #[test]
    fn order_two_matches_half_normal_mean() {
        let g = generate_1d(2).unwrap();
        let exact = (2.0 / PI).sqrt();
        // E[Z | Z > 0] by numerical integration as an independent check
        let numeric = integrate(|z| z * normal_pdf(z), 0.0, 40.0, 1e-14) / 0.5;
        assert!((numeric - exact).abs() < 1e-12);
        assert!((g.nodes[1] - exact).abs() < 1e-12);
        assert!((g.nodes[0] + exact).abs() < 1e-12);
        assert!((g.weights[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn generated_grids_are_symmetric_and_sorted() {
        for q in [3, 5, 11, 20] {
            let g = generate_1d(q).unwrap();
            for i in 0..q {
                assert!((g.nodes[i] + g.nodes[q - 1 - i]).abs() < 1e-10);
                if i > 0 {
                    assert!(g.nodes[i] > g.nodes[i - 1]);
                }
            }
            let s: f64 = g.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn first_moment_vanishes() {
        let g = generate_1d(20).unwrap();
        assert!(g.expect(|z| z[0]).abs() < 1e-10);
    }

    #[test]
    fn second_moment_is_one_minus_distortion() {
        // E[Zhat^2] = E[Z^2] - E[(Z - Zhat)^2] for stationary quantizers
        for q in [2, 5, 11, 20] {
            let g = generate_1d(q).unwrap();
            let m2 = g.expect(|z| z[0] * z[0]);
            assert!((m2 + distortion(&g) - 1.0).abs() < 1e-9, "Q={q}");
        }
    }

    #[test]
    fn stationarity_and_distortion_monotone() {
        let mut prev = f64::INFINITY;
        for q in [1, 2, 4, 8, 16] {
            let g = generate_1d(q).unwrap();
            assert!(stationarity_residual(&g) < 1e-8, "Q={q}");
            let dist = distortion(&g);
            assert!(dist < prev);
            prev = dist;
        }
    }

    #[test]
    fn product_grids() {
        let g = generate_1d(2).unwrap();
        assert_eq!(product_grid(&g, 1).unwrap(), g);
        let p = product_grid(&g, 2).unwrap();
        assert_eq!(p.order, 4);
        assert!(p.weights.iter().all(|&w| (w - 0.25).abs() < 1e-15));
        let p = product_grid(&generate_1d(3).unwrap(), 3).unwrap();
        assert_eq!(p.order, 27);
        assert!((p.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(product_grid(&g, 200).is_err());
        assert!(product_grid(&p, 2).is_err());
    }

    #[test]
    fn expect_is_exact_for_constants_and_linear() {
        let g = generate_1d(7).unwrap();
        assert!((g.expect(|_| 3.5) - 3.5).abs() < 1e-14);
        let f = |z: &[f64]| z[0].sin();
        let h = |z: &[f64]| z[0] * z[0];
        let lhs = g.expect(|z| 2.0 * f(z) - 0.5 * h(z));
        let rhs = 2.0 * g.expect(f) - 0.5 * g.expect(h);
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn tsv_round_trip_is_exact() {
        let g = generate_1d(5).unwrap();
        let mut buf = Vec::new();
        g.write_tsv(&mut buf).unwrap();
        let back = parse_grid(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn handcrafted_two_point_file() {
        let s = (2.0 / PI).sqrt();
        let text = format!("# Q=2\n{}\t0.5\n{}\t0.5\n", -s, s);
        let g = parse_grid(&text).unwrap();
        let mem = generate_1d(2).unwrap();
        for q in 0..2 {
            assert!((g.nodes[q] - mem.nodes[q]).abs() < 1e-15);
            assert_eq!(g.weights[q], mem.weights[q]);
        }
    }

    #[test]
    fn rejects_bad_files() {
        assert!(matches!(
            parse_grid("-1 0.45\n1 0.45\n"),
            Err(Error::WeightSum { .. })
        ));
        assert!(matches!(
            parse_grid("-1 0.5\n1 x\n"),
            Err(Error::GridFormat { line: 2, .. })
        ));
        assert!(matches!(
            parse_grid("-1 0.5\n1 0 0.5\n"),
            Err(Error::GridFormat { .. })
        ));
        let g = parse_grid("-1 0.5000001\n1 0.5\n").unwrap();
        assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
