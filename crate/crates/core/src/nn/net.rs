use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::policy::{Backing, Policy};

/// Architecture of a feedback network `(X, t) -> u`.
///
/// `widths` runs from the input `d + 1` to the output `d`; hidden layers
/// use the logistic sigmoid and the output is squashed into
/// `(u_min, u_max)`. Inputs are fed as `X / x_scale` and `t / t_scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetSpec {
    pub widths: Vec<usize>,
    pub u_min: f64,
    pub u_max: f64,
    pub x_scale: f64,
    pub t_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Bias block start; the `outputs x inputs` row-major weights follow.
    pub offset: usize,
}

impl Layer {
    pub fn weights(&self) -> usize {
        self.offset + self.outputs
    }
}

impl NetSpec {
    pub fn new(d: usize, hidden: &[usize], u_min: f64, u_max: f64, x_scale: f64, t_scale: f64) -> Result<Self> {
        let mut widths = vec![d + 1];
        widths.extend_from_slice(hidden);
        widths.push(d);
        let spec = Self {
            widths,
            u_min,
            u_max,
            x_scale,
            t_scale,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::invalid("network needs at least input and output layers of nonzero width"));
        }
        if self.widths[0] != self.dim() + 1 {
            return Err(Error::invalid("input width must be state dimension plus one"));
        }
        if !(self.u_min < self.u_max) {
            return Err(Error::invalid("u_min must be below u_max"));
        }
        if !(self.x_scale > 0.0 && self.t_scale > 0.0) {
            return Err(Error::invalid("input scales must be positive"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn hidden_layers(&self) -> usize {
        self.widths.len() - 2
    }

    pub(crate) fn layers(&self) -> Vec<Layer> {
        let mut offset = 0;
        self.widths
            .windows(2)
            .map(|w| {
                let l = Layer {
                    inputs: w[0],
                    outputs: w[1],
                    offset,
                };
                offset += w[1] * (w[0] + 1);
                l
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights and biases.
    pub fn init(&self, seed: u64) -> NetParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = vec![0.0; self.param_count()];
        for l in self.layers() {
            let a = 1.0 / (l.inputs as f64).sqrt();
            for v in &mut data[l.offset..l.offset + l.outputs * (l.inputs + 1)] {
                *v = rng.random_range(-a..a);
            }
        }
        NetParams { data }
    }

    pub fn zeros(&self) -> NetParams {
        NetParams {
            data: vec![0.0; self.param_count()],
        }
    }

    pub(crate) fn input(&self, x: &[f64], t: f64, out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = v / self.x_scale;
        }
        out[x.len()] = t / self.t_scale;
    }
}

/// Flat parameter vector: for each layer its biases, then its weights
/// row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub data: Vec<f64>,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Activations of one network evaluation: `acts[0]` is the normalized
/// input, `acts[l + 1]` the sigmoid outputs of layer `l` (for the last
/// layer, before scaling into the bounds).
#[derive(Debug, Clone, Default)]
pub(crate) struct Activations {
    pub acts: Vec<Vec<f64>>,
}

impl Activations {
    pub fn new(spec: &NetSpec) -> Self {
        Self {
            acts: spec.widths.iter().map(|&w| vec![0.0; w]).collect(),
        }
    }
}

pub(crate) fn forward_into(spec: &NetSpec, layers: &[Layer], params: &[f64], x: &[f64], t: f64, cache: &mut Activations, u: &mut [f64]) {
    spec.input(x, t, &mut cache.acts[0]);
    for (li, l) in layers.iter().enumerate() {
        let (prev, next) = cache.acts.split_at_mut(li + 1);
        let a = &prev[li];
        let out = &mut next[0];
        let w0 = l.weights();
        for o in 0..l.outputs {
            let row = &params[w0 + o * l.inputs..w0 + (o + 1) * l.inputs];
            let z = params[l.offset + o] + dot(row, a);
            out[o] = sigmoid(z);
        }
    }
    let s = cache.acts.last().unwrap();
    for (ui, si) in u.iter_mut().zip(s) {
        *ui = spec.u_min + (spec.u_max - spec.u_min) * si;
    }
}

/// Accumulates `g_u . du/dtheta` into `grad` and returns `g_u . du/dX`
/// in `g_x`, using the activations of the matching forward pass.
pub(crate) fn backward_into(
    spec: &NetSpec,
    layers: &[Layer],
    params: &[f64],
    cache: &Activations,
    g_u: &[f64],
    grad: &mut [f64],
    g_x: &mut [f64],
    scratch: &mut (Vec<f64>, Vec<f64>),
) {
    let (delta, carry) = scratch;
    let span = spec.u_max - spec.u_min;
    let s = cache.acts.last().unwrap();
    delta.clear();
    delta.extend(g_u.iter().zip(s).map(|(g, s)| g * span * s * (1.0 - s)));
    for (li, l) in layers.iter().enumerate().rev() {
        let a = &cache.acts[li];
        let w0 = l.weights();
        carry.clear();
        carry.resize(l.inputs, 0.0);
        for o in 0..l.outputs {
            let dz = delta[o];
            if dz == 0.0 {
                continue;
            }
            grad[l.offset + o] += dz;
            let row = w0 + o * l.inputs;
            let g = &mut grad[row..row + l.inputs];
            let w = &params[row..row + l.inputs];
            for ((gi, ci), (ai, wi)) in g.iter_mut().zip(carry.iter_mut()).zip(a.iter().zip(w)) {
                *gi += dz * ai;
                *ci += dz * wi;
            }
        }
        if li > 0 {
            delta.clear();
            delta.extend(carry.iter().zip(a).map(|(c, a)| c * a * (1.0 - a)));
        }
    }
    for (gx, c) in g_x.iter_mut().zip(carry.iter()) {
        *gx = c / spec.x_scale;
    }
}

/// A trained network used as a feedback policy.
#[derive(Debug, Clone)]
pub struct NetPolicy {
    pub spec: NetSpec,
    pub params: NetParams,
    layers: Vec<Layer>,
}

impl NetPolicy {
    pub fn new(spec: NetSpec, params: NetParams) -> Result<Self> {
        spec.validate()?;
        if params.data.len() != spec.param_count() {
            return Err(Error::DimensionMismatch {
                expected: spec.param_count(),
                got: params.data.len(),
            });
        }
        if let Some(i) = params.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteParameter(i));
        }
        let layers = spec.layers();
        Ok(Self { spec, params, layers })
    }

    pub fn forward(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut cache = Activations::new(&self.spec);
        let mut u = vec![0.0; self.spec.dim()];
        forward_into(&self.spec, &self.layers, &self.params.data, x, t, &mut cache, &mut u);
        u
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        write_checkpoint(&mut w, &self.spec, &self.params)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
        let (spec, params) = read_checkpoint(std::io::BufReader::new(file))?;
        Self::new(spec, params)
    }

    /// One row per parameter: `layer kind row col value`, `kind` being
    /// `bias` (col 0) or `weight`.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# widths\t{:?}", self.spec.widths)?;
        writeln!(w, "# bounds\t{}\t{}", self.spec.u_min, self.spec.u_max)?;
        writeln!(w, "# scales\t{}\t{}", self.spec.x_scale, self.spec.t_scale)?;
        writeln!(w, "layer\tkind\trow\tcol\tvalue")?;
        for (li, l) in self.layers.iter().enumerate() {
            for o in 0..l.outputs {
                writeln!(w, "{li}\tbias\t{o}\t0\t{}", self.params.data[l.offset + o])?;
            }
            for o in 0..l.outputs {
                for i in 0..l.inputs {
                    let v = self.params.data[l.weights() + o * l.inputs + i];
                    writeln!(w, "{li}\tweight\t{o}\t{i}\t{v}")?;
                }
            }
        }
        Ok(())
    }
}

impl Policy for NetPolicy {
    fn dim(&self) -> usize {
        self.spec.dim()
    }
    fn bounds(&self) -> (f64, f64) {
        (self.spec.u_min, self.spec.u_max)
    }
    fn backing(&self) -> Backing {
        Backing::Network
    }
    fn raw_control(&self, x: &[f64], t: f64, out: &mut [f64]) {
        let mut cache = Activations::new(&self.spec);
        forward_into(&self.spec, &self.layers, &self.params.data, x, t, &mut cache, out);
    }
}

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"FQNNET\0\x01";
pub const CHECKPOINT_VERSION: u32 = 1;
const ACTIVATION_SIGMOID: u32 = 0;

/// Little-endian checkpoint:
///
/// ```text
/// magic        8 bytes  "FQNNET\0\x01"
/// version      u32      1
/// activation   u32      0 = sigmoid
/// layers+1     u32      number of widths
/// widths       u32 each
/// u_min u_max  f64 f64
/// x_scale      f64
/// t_scale      f64
/// count        u64      number of parameters
/// params       f64 each, layer by layer: biases then row-major weights
/// ```
pub fn write_checkpoint<W: Write>(mut w: W, spec: &NetSpec, params: &NetParams) -> Result<()> {
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&ACTIVATION_SIGMOID.to_le_bytes())?;
    w.write_all(&(spec.widths.len() as u32).to_le_bytes())?;
    for &wd in &spec.widths {
        w.write_all(&(wd as u32).to_le_bytes())?;
    }
    for v in [spec.u_min, spec.u_max, spec.x_scale, spec.t_scale] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(params.data.len() as u64).to_le_bytes())?;
    for v in &params.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(NetSpec, NetParams)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(bad("not a network checkpoint"));
    }
    let mut u32_ = || -> Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|_| bad("truncated header"))?;
        Ok(u32::from_le_bytes(b))
    };
    let version = u32_()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    if u32_()? != ACTIVATION_SIGMOID {
        return Err(bad("unknown activation"));
    }
    let n = u32_()? as usize;
    if !(2..=64).contains(&n) {
        return Err(bad("implausible layer count"));
    }
    let widths = (0..n).map(|_| u32_().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let mut f = [0.0f64; 4];
    let mut b8 = [0u8; 8];
    for v in &mut f {
        r.read_exact(&mut b8).map_err(|_| bad("truncated header"))?;
        *v = f64::from_le_bytes(b8);
    }
    let spec = NetSpec {
        widths,
        u_min: f[0],
        u_max: f[1],
        x_scale: f[2],
        t_scale: f[3],
    };
    spec.validate()?;
    r.read_exact(&mut b8).map_err(|_| bad("truncated header"))?;
    let count = u64::from_le_bytes(b8) as usize;
    if count != spec.param_count() {
        return Err(bad("parameter count does not match the widths"));
    }
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut b8).map_err(|_| bad("truncated parameters"))?;
        data.push(f64::from_le_bytes(b8));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes"));
    }
    Ok((spec, NetParams { data }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_network_outputs_midpoint() {
        let spec = NetSpec::new(3, &[7, 5], 0.5, 1.0, 3.0, 2.0).unwrap();
        let p = NetPolicy::new(spec.clone(), spec.zeros()).unwrap();
        assert_eq!(p.forward(&[0.3, 1.0, 2.0], 0.7), vec![0.75; 3]);
    }

    #[test]
    fn single_hidden_unit_by_hand() {
        // input (X/2, t/2) with X = 1, t = 0.5 -> (0.5, 0.25)
        // hidden: z = 0.1 + 2 * 0.5 - 4 * 0.25 = 0.1
        // output: z = -0.3 + 1.5 * sigmoid(0.1)
        let spec = NetSpec::new(1, &[1], 0.5, 1.0, 2.0, 2.0).unwrap();
        let params = NetParams {
            data: vec![0.1, 2.0, -4.0, -0.3, 1.5],
        };
        let p = NetPolicy::new(spec, params).unwrap();
        let hidden = 1.0 / (1.0 + (-0.1f64).exp());
        let out = 1.0 / (1.0 + (0.3 - 1.5 * hidden).exp());
        let want = 0.5 + 0.5 * out;
        assert!((p.forward(&[1.0], 0.5)[0] - want).abs() < 1e-15);
        assert!((want - 0.80976).abs() < 1e-5);
    }

    #[test]
    fn layout_offsets() {
        let spec = NetSpec::new(3, &[10], 0.5, 1.0, 1.0, 1.0).unwrap();
        let l = spec.layers();
        assert_eq!(l[0].offset, 0);
        assert_eq!(l[1].offset, 10 * 5);
        assert_eq!(spec.param_count(), 50 + 3 * 11);
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let spec = NetSpec::new(2, &[4, 3], 0.5, 1.0, 3.0, 2.0).unwrap();
        let params = spec.init(11);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &spec, &params).unwrap();
        assert_eq!(&buf[..8], b"FQNNET\0\x01");
        assert_eq!(buf.len(), 8 + 12 + 4 * 4 + 32 + 8 + 8 * spec.param_count());
        let (s2, p2) = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(s2, spec);
        assert_eq!(p2, params);
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&bad[..]), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn non_finite_parameters_rejected() {
        let spec = NetSpec::new(1, &[2], 0.5, 1.0, 1.0, 1.0).unwrap();
        let mut p = spec.zeros();
        p.data[3] = f64::NAN;
        assert!(matches!(NetPolicy::new(spec, p), Err(Error::NonFiniteParameter(3))));
    }

    proptest! {
        #[test]
        fn outputs_strictly_inside_bounds(
            seed in any::<u64>(),
            scale in 0.0f64..50.0,
            x in proptest::collection::vec(-10.0f64..10.0, 3),
            t in 0.0f64..2.0,
        ) {
            let spec = NetSpec::new(3, &[6], 0.5, 1.0, 3.0, 2.0).unwrap();
            let mut params = spec.init(seed);
            for v in &mut params.data { *v *= scale; }
            let p = NetPolicy::new(spec, params).unwrap();
            for u in p.forward(&x, t) {
                prop_assert!((0.5..=1.0).contains(&u));
                prop_assert!(u.is_finite());
            }
        }
    }
}
