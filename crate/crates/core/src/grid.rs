//! Uniform tensor grids on `[0, L]^d`, multilinear interpolation, and the
//! grid-backed feedback policy shared by the DP and HJB solvers.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::policy::{Backing, Policy};

/// Uniform nodes `0, L/(n-1), ..., L` along each axis; values are stored
/// row-major with the last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorGrid {
    pub dims: Vec<usize>,
    pub length: f64,
}

impl TensorGrid {
    pub fn new(dims: Vec<usize>, length: f64) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&n| n < 2) {
            return Err(Error::invalid("every axis needs at least two nodes"));
        }
        if !(length > 0.0) {
            return Err(Error::invalid("domain length must be positive"));
        }
        Ok(Self { dims, length })
    }

    pub fn cube(d: usize, n: usize, length: f64) -> Result<Self> {
        Self::new(vec![n; d], length)
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.length / (self.dims[axis] - 1) as f64
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dim()];
        for a in (0..self.dim().saturating_sub(1)).rev() {
            s[a] = s[a + 1] * self.dims[a + 1];
        }
        s
    }

    /// Multi-index of a flat node index.
    pub fn unravel(&self, mut flat: usize, idx: &mut [usize]) {
        for a in (0..self.dim()).rev() {
            idx[a] = flat % self.dims[a];
            flat /= self.dims[a];
        }
    }

    pub fn coords(&self, flat: usize, out: &mut [f64]) {
        let mut idx = vec![0; self.dim()];
        self.unravel(flat, &mut idx);
        for a in 0..self.dim() {
            out[a] = idx[a] as f64 * self.spacing(a);
        }
    }

    /// Multilinear interpolation of a nodal field at `x`.
    ///
    /// With `extrapolate == false` the point is first clamped to the
    /// domain; otherwise the boundary cells are extended linearly.
    pub fn interp(&self, field: &[f64], x: &[f64], extrapolate: bool) -> f64 {
        self.interp_strided(field, 1, 0, x, extrapolate)
    }

    /// Like [`TensorGrid::interp`] for interleaved fields: node `k` holds
    /// its value at `field[k * stride + offset]`.
    pub fn interp_strided(
        &self,
        field: &[f64],
        stride: usize,
        offset: usize,
        x: &[f64],
        extrapolate: bool,
    ) -> f64 {
        let d = self.dim();
        debug_assert_eq!(x.len(), d);
        let strides = self.strides();
        let mut base = 0usize;
        let mut frac = [0.0f64; 8];
        let mut frac_vec;
        let fr: &mut [f64] = if d <= 8 {
            &mut frac[..d]
        } else {
            frac_vec = vec![0.0; d];
            &mut frac_vec
        };
        for a in 0..d {
            let n = self.dims[a];
            let mut s = x[a] / self.spacing(a);
            if !extrapolate {
                s = s.clamp(0.0, (n - 1) as f64);
            }
            let i = if s.is_nan() {
                0
            } else {
                (s.floor().max(0.0) as usize).min(n - 2)
            };
            fr[a] = s - i as f64;
            base += i * strides[a];
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut k = base;
            for a in 0..d {
                if corner >> a & 1 == 1 {
                    w *= fr[a];
                    k += strides[a];
                } else {
                    w *= 1.0 - fr[a];
                }
            }
            acc += w * field[k * stride + offset];
        }
        acc
    }
}

/// Piecewise-linear interpolation of a row sampled at `j * dx`, extended
/// linearly beyond both ends.
pub fn interp_1d(row: &[f64], dx: f64, x: f64) -> f64 {
    let n = row.len();
    let s = x / dx;
    let j = if s.is_nan() {
        0
    } else {
        (s.floor().max(0.0) as usize).min(n - 2)
    };
    let t = s - j as f64;
    row[j] + t * (row[j + 1] - row[j])
}

/// Which solver produced a grid policy; decides out-of-domain handling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    /// Linear extrapolation beyond the grid.
    Sdp,
    /// Queries clamped to the domain.
    Hjb,
}

impl GridKind {
    fn name(self) -> &'static str {
        match self {
            GridKind::Sdp => "sdp",
            GridKind::Hjb => "hjb",
        }
    }
}

/// A feedback control stored on a tensor grid for each time step:
/// multilinear in space, piecewise constant in time
/// (step `floor(t / h)`, clamped to the last step).
#[derive(Debug, Clone, PartialEq)]
pub struct GridPolicy {
    pub kind: GridKind,
    pub grid: TensorGrid,
    pub steps: usize,
    pub horizon: f64,
    pub u_min: f64,
    pub u_max: f64,
    /// `steps x nodes x d`.
    pub controls: Vec<f64>,
}

impl GridPolicy {
    pub fn step_index(&self, t: f64) -> usize {
        let h = self.horizon / self.steps as f64;
        let m = (t / h + 1e-9).floor();
        if m.is_nan() || m < 0.0 {
            0
        } else {
            (m as usize).min(self.steps - 1)
        }
    }

    fn step_block(&self, m: usize) -> &[f64] {
        let block = self.grid.len() * self.grid.dim();
        &self.controls[m * block..(m + 1) * block]
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.grid.dim();
        writeln!(w, "# fishquota grid-policy")?;
        writeln!(w, "# kind\t{}", self.kind.name())?;
        write!(w, "# dims")?;
        for n in &self.grid.dims {
            write!(w, "\t{n}")?;
        }
        writeln!(w)?;
        writeln!(w, "# length\t{}", self.grid.length)?;
        writeln!(w, "# steps\t{}", self.steps)?;
        writeln!(w, "# horizon\t{}", self.horizon)?;
        writeln!(w, "# bounds\t{}\t{}", self.u_min, self.u_max)?;
        let h = self.horizon / self.steps as f64;
        let mut x = vec![0.0; d];
        for m in 0..self.steps {
            let block = self.step_block(m);
            for k in 0..self.grid.len() {
                self.grid.coords(k, &mut x);
                write!(w, "{}", m as f64 * h)?;
                for v in &x {
                    write!(w, "\t{v}")?;
                }
                for v in &block[k * d..(k + 1) * d] {
                    write!(w, "\t{v}")?;
                }
                writeln!(w)?;
            }
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

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::GridFormat {
            line,
            msg: msg.to_string(),
        };
        let mut kind = None;
        let mut dims: Option<Vec<usize>> = None;
        let mut length = None;
        let mut steps = None;
        let mut horizon = None;
        let mut bounds = None;
        let mut controls = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if let Some(meta) = line.strip_prefix('#') {
                let mut parts = meta.split_whitespace();
                let key = parts.next().unwrap_or("");
                let vals: Vec<&str> = parts.collect();
                let num = |s: &str| s.parse::<f64>().map_err(|_| bad(lineno, "bad number"));
                match key {
                    "kind" => {
                        kind = Some(match vals.first().copied() {
                            Some("sdp") => GridKind::Sdp,
                            Some("hjb") => GridKind::Hjb,
                            _ => return Err(bad(lineno, "unknown kind")),
                        })
                    }
                    "dims" => {
                        dims = Some(
                            vals.iter()
                                .map(|s| s.parse().map_err(|_| bad(lineno, "bad dims")))
                                .collect::<Result<_>>()?,
                        )
                    }
                    "length" => length = Some(num(vals.first().copied().unwrap_or(""))?),
                    "steps" => {
                        steps = Some(
                            vals.first()
                                .and_then(|s| s.parse::<usize>().ok())
                                .ok_or_else(|| bad(lineno, "bad steps"))?,
                        )
                    }
                    "horizon" => horizon = Some(num(vals.first().copied().unwrap_or(""))?),
                    "bounds" if vals.len() == 2 => bounds = Some((num(vals[0])?, num(vals[1])?)),
                    _ => {}
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let d = dims
                .as_ref()
                .ok_or_else(|| bad(lineno, "data before header"))?
                .len();
            let fields: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(lineno, "bad number"))?;
            if fields.len() != 1 + 2 * d {
                return Err(bad(lineno, "wrong column count"));
            }
            controls.extend_from_slice(&fields[1 + d..]);
        }
        let missing = |what: &str| bad(0, &format!("missing header field {what}"));
        let grid = TensorGrid::new(dims.ok_or_else(|| missing("dims"))?, length.ok_or_else(|| missing("length"))?)?;
        let steps = steps.ok_or_else(|| missing("steps"))?;
        let (u_min, u_max) = bounds.ok_or_else(|| missing("bounds"))?;
        if controls.len() != steps * grid.len() * grid.dim() {
            return Err(bad(0, "row count does not match header"));
        }
        Ok(Self {
            kind: kind.ok_or_else(|| missing("kind"))?,
            grid,
            steps,
            horizon: horizon.ok_or_else(|| missing("horizon"))?,
            u_min,
            u_max,
            controls,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
        Self::read(std::io::BufReader::new(file))
    }
}

impl Policy for GridPolicy {
    fn dim(&self) -> usize {
        self.grid.dim()
    }
    fn bounds(&self) -> (f64, f64) {
        (self.u_min, self.u_max)
    }
    fn backing(&self) -> Backing {
        Backing::Grid
    }
    fn raw_control(&self, x: &[f64], t: f64, out: &mut [f64]) {
        let block = self.step_block(self.step_index(t));
        let d = self.grid.dim();
        let extrapolate = self.kind == GridKind::Sdp;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.grid.interp_strided(block, d, i, x, extrapolate);
        }
    }
}

/// Writes `x t value` rows, scanlines ordered by `t` then `x`, a blank
/// line between scanlines.
pub fn write_surface<W: Write>(
    mut w: W,
    xs: &[f64],
    ts: &[f64],
    value: impl Fn(usize, usize) -> f64,
) -> std::io::Result<()> {
    for (m, t) in ts.iter().enumerate() {
        if m > 0 {
            writeln!(w)?;
        }
        for (j, x) in xs.iter().enumerate() {
            writeln!(w, "{x}\t{t}\t{}", value(m, j))?;
        }
    }
    Ok(())
}

/// Component `comp` of a policy along axis `axis` through `through`
/// (the other coordinates), as `x t u` surface rows.
pub fn write_policy_slice<W: Write, P: Policy + ?Sized>(
    w: W,
    policy: &P,
    axis: usize,
    comp: usize,
    through: &[f64],
    xs: &[f64],
    ts: &[f64],
) -> std::io::Result<()> {
    let mut x = through.to_vec();
    let mut u = vec![0.0; policy.dim()];
    let mut vals = vec![0.0; xs.len() * ts.len()];
    for (m, &t) in ts.iter().enumerate() {
        for (j, &xj) in xs.iter().enumerate() {
            x[axis] = xj;
            policy.control(&x, t, &mut u);
            vals[m * xs.len() + j] = u[comp];
        }
    }
    write_surface(w, xs, ts, |m, j| vals[m * xs.len() + j])
}

/// A surface read back from [`write_surface`] output.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub xs: Vec<f64>,
    pub ts: Vec<f64>,
    /// `ts.len() x xs.len()`.
    pub values: Vec<f64>,
}

pub fn read_surface<R: BufRead>(r: R) -> Result<Surface> {
    let mut scanlines: Vec<Vec<(f64, f64, f64)>> = vec![Vec::new()];
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.starts_with('#') {
            continue;
        }
        if line.is_empty() {
            if !scanlines.last().unwrap().is_empty() {
                scanlines.push(Vec::new());
            }
            continue;
        }
        let f: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::GridFormat {
                line: i + 1,
                msg: e.to_string(),
            })?;
        if f.len() != 3 {
            return Err(Error::GridFormat {
                line: i + 1,
                msg: "expected x t value".into(),
            });
        }
        scanlines.last_mut().unwrap().push((f[0], f[1], f[2]));
    }
    if scanlines.last().is_some_and(|s| s.is_empty()) {
        scanlines.pop();
    }
    let xs: Vec<f64> = scanlines
        .first()
        .map(|s| s.iter().map(|p| p.0).collect())
        .unwrap_or_default();
    let mut ts = Vec::new();
    let mut values = Vec::new();
    for (k, s) in scanlines.iter().enumerate() {
        if s.len() != xs.len() || s.iter().zip(&xs).any(|(p, x)| p.0 != *x) {
            return Err(Error::GridFormat {
                line: 0,
                msg: format!("scanline {k} does not match the first"),
            });
        }
        ts.push(s[0].1);
        values.extend(s.iter().map(|p| p.2));
    }
    Ok(Surface { xs, ts, values })
}
