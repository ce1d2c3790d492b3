//! C ABI over the `fishquota` solvers.
//!
//! Configs and policies are opaque handles created by `fq_*` constructors
//! and released with the matching `*_free`. Every fallible call returns an
//! [`FqStatus`]; on failure, [`fq_last_error`] gives a message for the
//! calling thread. Output handles are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::slice;
use std::sync::Arc;

use fishquota::grid::GridPolicy;
use fishquota::hjb::{self, HjbSettings};
use fishquota::load::load_policy;
use fishquota::model::{self, sample_seeds, ModelConfig, NoiseKind, NoisePath};
use fishquota::nn::{self, NetPolicy, TrainConfig};
use fishquota::quantization::generate_1d;
use fishquota::sdp::{self, SdpSettings};
use fishquota::{ConstantPolicy, Error, Policy};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Numerical = 4,
    MemoryBudget = 5,
    Io = 6,
    Format = 7,
    Unsupported = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Opaque model configuration.
pub struct FqConfig {
    cfg: ModelConfig,
}

enum Stored {
    Grid(GridPolicy),
    Net(NetPolicy),
    Other,
}

/// Opaque feedback policy.
pub struct FqPolicy {
    policy: Arc<dyn Policy>,
    stored: Stored,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> FqStatus {
    match e {
        Error::InvalidArgument(_) | Error::Config(_) => FqStatus::InvalidArgument,
        Error::DimensionMismatch { .. } => FqStatus::DimensionMismatch,
        Error::MemoryBudget { .. } => FqStatus::MemoryBudget,
        Error::UnsupportedDimension(_) => FqStatus::Unsupported,
        Error::File { .. } | Error::Io(_) => FqStatus::Io,
        Error::GridFormat { .. } | Error::WeightSum { .. } | Error::Checkpoint(_) => FqStatus::Format,
        e if e.is_numerical() => FqStatus::Numerical,
        _ => FqStatus::InvalidArgument,
    }
}

struct Fail(FqStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn fail(status: FqStatus, msg: impl Into<String>) -> Fail {
    Fail(status, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FqStatus::Ok,
        Ok(Err(Fail(s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            FqStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(fail(FqStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(FqStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| fail(FqStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(fail(FqStatus::NullPointer, format!("{what} is null")));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| fail(FqStatus::NullPointer, format!("{what} is null")))
}

fn dims_match(expected: usize, got: usize) -> Result<(), Fail> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got }.into());
    }
    Ok(())
}

fn new_config(cfg: ModelConfig) -> *mut FqConfig {
    Box::into_raw(Box::new(FqConfig { cfg }))
}

fn new_policy(policy: Arc<dyn Policy>, stored: Stored) -> *mut FqPolicy {
    Box::into_raw(Box::new(FqPolicy { policy, stored }))
}

/// Message of the last failed call on this thread; empty if none. Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fq_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Built-in model: `single`, `unit`, `three` or `five`.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fq_config_preset(name: *const c_char, out: *mut *mut FqConfig) -> FqStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        let out = out_arg(out, "out")?;
        let cfg = ModelConfig::preset(name)
            .ok_or_else(|| fail(FqStatus::InvalidArgument, format!("unknown preset `{name}`")))?;
        *out = new_config(cfg);
        Ok(())
    })
}

/// Reads a TOML model config.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fq_config_load(path: *const c_char, out: *mut *mut FqConfig) -> FqStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        *out = new_config(ModelConfig::load(path)?);
        Ok(())
    })
}

/// Parses a TOML model config held in memory.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fq_config_from_toml(text: *const c_char, out: *mut *mut FqConfig) -> FqStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let out = out_arg(out, "out")?;
        *out = new_config(ModelConfig::from_toml_str(text)?);
        Ok(())
    })
}

/// Number of species, or 0 for a null handle.
///
/// # Safety
/// `cfg` must be null or a live config handle.
#[no_mangle]
pub unsafe extern "C" fn fq_config_dim(cfg: *const FqConfig) -> usize {
    cfg.as_ref().map_or(0, |c| c.cfg.d)
}

/// Number of time steps M, or 0 for a null handle.
///
/// # Safety
/// `cfg` must be null or a live config handle.
#[no_mangle]
pub unsafe extern "C" fn fq_config_steps(cfg: *const FqConfig) -> usize {
    cfg.as_ref().map_or(0, |c| c.cfg.steps)
}

/// Changes the number of time steps M.
///
/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn fq_config_set_steps(cfg: *mut FqConfig, steps: usize) -> FqStatus {
    guard(|| {
        let c = out_arg(cfg, "cfg")?;
        let next = c.cfg.with_steps(steps);
        next.validate()?;
        c.cfg = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fq_config_free(cfg: *mut FqConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Constant quota `u` (clamped to the config's bounds) for every species.
///
/// # Safety
/// `cfg` must be a live config handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fq_policy_constant(cfg: *const FqConfig, u: f64, out: *mut *mut FqPolicy) -> FqStatus {
    guard(|| {
        let c = &ref_arg(cfg, "cfg")?.cfg;
        let out = out_arg(out, "out")?;
        if !u.is_finite() {
            return Err(fail(FqStatus::InvalidArgument, "control must be finite"));
        }
        *out = new_policy(Arc::new(ConstantPolicy::new(c.d, u, c.u_min, c.u_max)), Stored::Other);
        Ok(())
    })
}

/// Loads a policy from a description such as `sdp:path`, `hjb:path`,
/// `nn:path`, `const:u` or `oracle:<description>`.
///
/// # Safety
/// `cfg` must be a live config handle, `spec` a NUL-terminated string and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fq_policy_load(cfg: *const FqConfig, spec: *const c_char, out: *mut *mut FqPolicy) -> FqStatus {
    guard(|| {
        let c = &ref_arg(cfg, "cfg")?.cfg;
        let spec = str_arg(spec, "spec")?;
        let out = out_arg(out, "out")?;
        let stored = match spec.split_once(':') {
            Some(("sdp" | "hjb", path)) => Stored::Grid(GridPolicy::load(path)?),
            Some(("nn", path)) => Stored::Net(NetPolicy::load(path)?),
            _ => Stored::Other,
        };
        let policy: Arc<dyn Policy> = match &stored {
            Stored::Grid(g) => {
                dims_match(c.d, g.dim())?;
                Arc::new(g.clone())
            }
            Stored::Net(n) => {
                dims_match(c.d, n.dim())?;
                Arc::new(n.clone())
            }
            Stored::Other => load_policy(spec, c)?,
        };
        *out = new_policy(policy, stored);
        Ok(())
    })
}

/// Backward dynamic programming (single species). Zero arguments select
/// the defaults: 40 intervals, length 3, quantizer size 11.
///
/// # Safety
/// `cfg` must be a live config handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fq_policy_solve_sdp(
    cfg: *const FqConfig,
    intervals: usize,
    length: f64,
    quant_order: usize,
    out: *mut *mut FqPolicy,
) -> FqStatus {
    guard(|| {
        let c = &ref_arg(cfg, "cfg")?.cfg;
        let out = out_arg(out, "out")?;
        let mut s = SdpSettings::default();
        if intervals > 0 {
            s.intervals = intervals;
        }
        if length > 0.0 {
            s.length = length;
        }
        let q = generate_1d(if quant_order > 0 { quant_order } else { 11 })?;
        let g = sdp::policy_of(&sdp::solve(c, &s, &q)?);
        *out = new_policy(Arc::new(g.clone()), Stored::Grid(g));
        Ok(())
    })
}

/// Semi-Lagrangian HJB solver. Zero arguments select the per-dimension
/// defaults.
///
/// # Safety
/// `cfg` must be a live config handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fq_policy_solve_hjb(
    cfg: *const FqConfig,
    nodes: usize,
    length: f64,
    steps: usize,
    out: *mut *mut FqPolicy,
) -> FqStatus {
    guard(|| {
        let c = &ref_arg(cfg, "cfg")?.cfg;
        let out = out_arg(out, "out")?;
        let mut s = HjbSettings::for_dim(c.d);
        if nodes > 0 {
            s.nodes = vec![nodes; c.d];
        }
        if length > 0.0 {
            s.length = length;
        }
        if steps > 0 {
            s.steps = steps;
        }
        let g = hjb::solve(c, &s)?.policy();
        *out = new_policy(Arc::new(g.clone()), Stored::Grid(g));
        Ok(())
    })
}

/// Trains a network policy with ADAM. `hidden` holds `n_hidden` layer
/// widths.
///
/// # Safety
/// `cfg` must be a live config handle, `hidden` must point to `n_hidden`
/// values and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fq_policy_train_nn(
    cfg: *const FqConfig,
    hidden: *const usize,
    n_hidden: usize,
    iterations: usize,
    seed: u64,
    out: *mut *mut FqPolicy,
) -> FqStatus {
    guard(|| {
        let c = &ref_arg(cfg, "cfg")?.cfg;
        let out = out_arg(out, "out")?;
        if hidden.is_null() {
            return Err(fail(FqStatus::NullPointer, "hidden is null"));
        }
        let widths = slice::from_raw_parts(hidden, n_hidden).to_vec();
        let mut tc = TrainConfig::new(widths);
        tc.init_seed = seed;
        tc.batches.seed = seed;
        tc.adam.iterations = iterations;
        let p = nn::train_adam(c, &tc)?.policy;
        *out = new_policy(Arc::new(p.clone()), Stored::Net(p));
        Ok(())
    })
}

/// Writes a solved or trained policy to `path` in the format `fq_policy_load`
/// reads back.
///
/// # Safety
/// `policy` must be a live policy handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fq_policy_save(policy: *const FqPolicy, path: *const c_char) -> FqStatus {
    guard(|| {
        let p = ref_arg(policy, "policy")?;
        let path = Path::new(str_arg(path, "path")?);
        match &p.stored {
            Stored::Grid(g) => g.save(path)?,
            Stored::Net(n) => n.save(path)?,
            Stored::Other => return Err(fail(FqStatus::Unsupported, "this policy has no file form")),
        }
        Ok(())
    })
}

/// Number of species the policy acts on, or 0 for a null handle.
///
/// # Safety
/// `policy` must be null or a live policy handle.
#[no_mangle]
pub unsafe extern "C" fn fq_policy_dim(policy: *const FqPolicy) -> usize {
    policy.as_ref().map_or(0, |p| p.policy.dim())
}

/// Quota `u(x, t)`: reads `d` states from `x` and writes `d` controls.
///
/// # Safety
/// `policy` must be a live policy handle; `x` and `u_out` must each hold `d`
/// values.
#[no_mangle]
pub unsafe extern "C" fn fq_policy_evaluate(
    policy: *const FqPolicy,
    x: *const f64,
    d: usize,
    t: f64,
    u_out: *mut f64,
) -> FqStatus {
    guard(|| {
        let p = &ref_arg(policy, "policy")?.policy;
        dims_match(p.dim(), d)?;
        let x = slice_arg(x, d, "x")?;
        if u_out.is_null() {
            return Err(fail(FqStatus::NullPointer, "u_out is null"));
        }
        let out = slice::from_raw_parts_mut(u_out, d);
        p.control(x, t, out);
        Ok(())
    })
}

/// # Safety
/// `policy` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fq_policy_free(policy: *mut FqPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Monte-Carlo cost over `samples` paths derived from `seed`. Equal seeds
/// give common random numbers across policies.
///
/// # Safety
/// Handles must be live; `x0` must hold `d` values; `mean` and `stderr_out`
/// must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fq_mc_cost(
    cfg: *const FqConfig,
    policy: *const FqPolicy,
    x0: *const f64,
    d: usize,
    samples: usize,
    seed: u64,
    mean: *mut f64,
    stderr_out: *mut f64,
) -> FqStatus {
    guard(|| {
        let c = &ref_arg(cfg, "cfg")?.cfg;
        let p = &ref_arg(policy, "policy")?.policy;
        dims_match(c.d, d)?;
        let x0 = slice_arg(x0, d, "x0")?;
        let mean = out_arg(mean, "mean")?;
        let se = out_arg(stderr_out, "stderr_out")?;
        let est = model::mc_cost(c, &**p, x0, &sample_seeds(seed, samples))?;
        *mean = est.mean;
        *se = est.stderr;
        Ok(())
    })
}

/// Simulates one path. `states` and `controls` receive `(M + 1) * d`
/// values each, row-major by time step; `cost` receives the path cost.
/// Fails with `BufferTooSmall` when a length is short.
///
/// # Safety
/// Handles must be live; `x0` must hold `d` values; `states` and `controls`
/// must hold the given lengths; `cost` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fq_simulate(
    cfg: *const FqConfig,
    policy: *const FqPolicy,
    x0: *const f64,
    d: usize,
    seed: u64,
    states: *mut f64,
    states_len: usize,
    controls: *mut f64,
    controls_len: usize,
    cost: *mut f64,
) -> FqStatus {
    guard(|| {
        let c = &ref_arg(cfg, "cfg")?.cfg;
        let p = &ref_arg(policy, "policy")?.policy;
        dims_match(c.d, d)?;
        let x0 = slice_arg(x0, d, "x0")?;
        let need = (c.steps + 1) * d;
        if states_len < need || controls_len < need {
            return Err(fail(
                FqStatus::BufferTooSmall,
                format!("buffers need {need} values, got {states_len} and {controls_len}"),
            ));
        }
        if states.is_null() || controls.is_null() {
            return Err(fail(FqStatus::NullPointer, "output buffer is null"));
        }
        let cost = out_arg(cost, "cost")?;
        let noise = NoisePath::generate(seed, c.steps, d, c.h(), NoiseKind::Independent);
        let tr = model::simulate(c, &**p, x0, &noise)?;
        slice::from_raw_parts_mut(states, need).copy_from_slice(&tr.states);
        slice::from_raw_parts_mut(controls, need).copy_from_slice(&tr.controls);
        *cost = tr.total_cost;
        Ok(())
    })
}
