//! The `fishquota` command line: one subcommand per solver plus
//! simulation, evaluation and assessment, each run leaving TSV outputs and
//! a JSON manifest with checksums in the output directory.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::assess::{self, OracleSpec, Threshold};
use crate::error::{Error, Result};
use crate::grid::{write_policy_slice, write_surface};
use crate::hjb::{self, HjbSettings};
use crate::load::load_policy;
use crate::model::{self, sample_seeds, ModelConfig, NoiseKind, NoisePath, KAPPA_3, KAPPA_5};
use crate::nn::{self, TrainConfig};
use crate::policy::{ConstantPolicy, Policy};
use crate::quantization::{generate_1d, load_grid};
use crate::sdp::{self, ControlSearch, SdpSettings};

#[derive(Debug, Parser)]
#[command(name = "fishquota", version, about = "Fishing-quota feedback policies: DP, HJB and neural solvers")]
pub struct Cli {
    /// Worker threads (1 gives bit-reproducible runs); default: all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, env = "FISHQUOTA_OUT", default_value = "fishquota-out")]
    pub out: PathBuf,

    /// Model config (TOML); overrides --preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Built-in model: single, unit, three, five.
    #[arg(long, global = true, default_value = "single")]
    pub preset: String,

    /// Override the number of time steps M of the model.
    #[arg(long, global = true)]
    pub steps: Option<usize>,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one path under a policy, with a no-quota companion path.
    Simulate(SimulateArgs),
    /// Backward dynamic programming (single species).
    SolveSdp(SdpArgs),
    /// Semi-Lagrangian HJB solver.
    SolveHjb(HjbArgs),
    /// Train a neural feedback policy.
    TrainNn(NnArgs),
    /// Common-random-number cost table over a sweep of starting points.
    Evaluate(EvaluateArgs),
    /// Commutation check and predicted switch lines for a lifted policy.
    Assess(AssessArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// const:<u> | sdp:<file> | hjb:<file> | nn:<file> | oracle:<spec>
    #[arg(long)]
    pub policy: String,
    /// Starting state, comma separated; one value is repeated for every species.
    #[arg(long, default_value = "0.7")]
    pub x0: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = NoiseArg::Independent)]
    pub noise: NoiseArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NoiseArg {
    Independent,
    Common,
}

impl From<NoiseArg> for NoiseKind {
    fn from(n: NoiseArg) -> Self {
        match n {
            NoiseArg::Independent => NoiseKind::Independent,
            NoiseArg::Common => NoiseKind::Common,
        }
    }
}

#[derive(Debug, Args)]
pub struct SdpArgs {
    /// Grid intervals J.
    #[arg(long, default_value_t = 40)]
    pub intervals: usize,
    /// Domain length L.
    #[arg(long, default_value_t = 3.0)]
    pub length: f64,
    /// Quantizer size Q (ignored with --quant-grid).
    #[arg(long, default_value_t = 11)]
    pub quant_order: usize,
    /// External quantizer file (`z w` rows).
    #[arg(long)]
    pub quant_grid: Option<PathBuf>,
    /// Exhaustive search over this many control levels instead of golden section.
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long, default_value_t = 50)]
    pub golden_iters: usize,
}

#[derive(Debug, Args)]
pub struct HjbArgs {
    /// Nodes per axis (default: 161 in 1D, 32 in 3D, 16 otherwise).
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long, default_value_t = 3.0)]
    pub length: f64,
    /// Time steps of the scheme (default: 200 in 1D, 80 otherwise).
    #[arg(long)]
    pub hjb_steps: Option<usize>,
    #[arg(long, default_value_t = 4096)]
    pub memory_budget_mb: usize,
    /// Point the axis slices pass through (default: the target state).
    #[arg(long)]
    pub slice_at: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Optimizer {
    Adam,
    Cg,
}

#[derive(Debug, Args)]
pub struct NnArgs {
    /// Hidden layer widths, comma separated (default: 100,100; 2048 for five species).
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long, value_enum, default_value_t = Optimizer::Adam)]
    pub optimizer: Optimizer,
    /// Iterations (default: 2000 for ADAM, 40 for CG).
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 256)]
    pub eval_batch: usize,
    /// ADAM step size.
    #[arg(long, default_value_t = 0.001)]
    pub step: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Range of training starting states, `low:high`.
    #[arg(long, default_value = "0.2:2")]
    pub x0_range: String,
    /// Point the axis slices pass through (default: the target state).
    #[arg(long)]
    pub slice_at: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Policies to compare (repeatable).
    #[arg(long = "policies", required = true, num_args = 1..)]
    pub policies: Vec<String>,
    /// Starting points `a:b:step` or a comma list; each value s means X0 = s (1,...,1).
    #[arg(long, default_value = "0.5:1.4:0.1")]
    pub x0_sweep: String,
    /// Sample paths per cell (default: the config's sample count).
    #[arg(short = 'K', long)]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Also evaluate on meshes refined by these factors, sharing Brownian paths.
    #[arg(long)]
    pub mesh_factors: Option<String>,
}

#[derive(Debug, Args)]
pub struct AssessArgs {
    /// Scalar policy to lift (solved on unit self-interaction).
    #[arg(long)]
    pub policy1d: String,
    /// Interaction matrix: `three`, `five` or a row-major comma list (default: the config's).
    #[arg(long)]
    pub kappa: Option<String>,
    /// Starting value of the scalar reference path.
    #[arg(long, default_value_t = 0.8)]
    pub y0: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Switch level of the scalar policy.
    #[arg(long, default_value_t = 1.0)]
    pub y_star: f64,
    /// Fixed coordinates for the slice along each axis in turn (repeatable,
    /// comma separated; default kappa^{-1}(y* 1)).
    #[arg(long = "fixed-point")]
    pub fixed_point: Vec<String>,
    #[arg(long, default_value_t = 3.0)]
    pub length: f64,
}

/// Process exit status for a failed run: 2 usage, 3 numerical, 4 resources.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::MemoryBudget { .. } => 4,
        e if e.is_numerical() => 3,
        _ => 2,
    }
}

#[derive(Debug, Serialize)]
struct FileRecord {
    name: String,
    bytes: u64,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: String,
    argv: Vec<String>,
    config: String,
    model: ModelConfig,
    seed: Option<u64>,
    threads: Option<usize>,
    out_dir: String,
    wall_clock_seconds: f64,
    files: Vec<FileRecord>,
}

/// Files written by one run.
struct Outputs {
    dir: PathBuf,
    names: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            names: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.names.push(name.to_string());
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
        let path = self.path(name);
        let f = File::create(&path).map_err(|e| Error::file(&path, e))?;
        let mut w = BufWriter::new(f);
        body(&mut w).map_err(|e| Error::file(&path, e))?;
        w.flush().map_err(|e| Error::file(&path, e))?;
        Ok(())
    }

    fn records(&self) -> Result<Vec<FileRecord>> {
        self.names
            .iter()
            .map(|n| {
                let p = self.dir.join(n);
                let data = std::fs::read(&p).map_err(|e| Error::file(&p, e))?;
                Ok(FileRecord {
                    name: n.clone(),
                    bytes: data.len() as u64,
                    sha256: hex::encode(Sha256::digest(&data)),
                })
            })
            .collect()
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad number `{v}` in `{s}`")))
        })
        .collect()
}

fn parse_state(s: &str, d: usize) -> Result<Vec<f64>> {
    let v = parse_list(s)?;
    match v.len() {
        1 => Ok(vec![v[0]; d]),
        n if n == d => Ok(v),
        n => Err(Error::DimensionMismatch { expected: d, got: n }),
    }
}

/// `a:b:step` (inclusive) or a comma list.
pub fn parse_sweep(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 1 {
        return parse_list(s);
    }
    if parts.len() != 3 {
        return Err(Error::invalid(format!("sweep `{s}` is not a:b:step")));
    }
    let v = parse_list(&parts.join(","))?;
    let (a, b, step) = (v[0], v[1], v[2]);
    if !(step > 0.0) || b < a {
        return Err(Error::invalid(format!("empty sweep `{s}`")));
    }
    let n = ((b - a) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| ((a + k as f64 * step) * 1e12).round() / 1e12).collect())
}

fn load_config(cli: &Cli) -> Result<(ModelConfig, String)> {
    let (mut cfg, name) = match &cli.config {
        Some(p) => (ModelConfig::load(p)?, p.display().to_string()),
        None => (
            ModelConfig::preset(&cli.preset).ok_or_else(|| Error::invalid(format!("unknown preset `{}`", cli.preset)))?,
            format!("preset:{}", cli.preset),
        ),
    };
    if let Some(m) = cli.steps {
        cfg = cfg.with_steps(m);
    }
    cfg.validate()?;
    Ok((cfg, name))
}

fn step_times(horizon: f64, steps: usize, count: usize) -> Vec<f64> {
    let h = horizon / steps as f64;
    (0..count).map(|m| m as f64 * h).collect()
}

fn slice_files(out: &mut Outputs, prefix: &str, policy: &dyn Policy, through: &[f64], xs: &[f64], ts: &[f64]) -> Result<()> {
    let d = policy.dim();
    for comp in 0..d {
        for axis in 0..d {
            let name = format!("{prefix}_u{}_x{}.tsv", comp + 1, axis + 1);
            out.write(&name, |w| {
                writeln!(w, "# u{} along X{} through {:?}", comp + 1, axis + 1, through)?;
                write_policy_slice(w, policy, axis, comp, through, xs, ts)
            })?;
        }
    }
    Ok(())
}

/// Runs a parsed command line.
pub fn run(cli: Cli, argv: Vec<String>) -> Result<()> {
    let pool = match cli.threads {
        Some(n) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::invalid(e.to_string()))?,
        ),
        None => None,
    };
    match pool {
        Some(p) => p.install(|| run_inner(&cli, argv)),
        None => run_inner(&cli, argv),
    }
}

fn run_inner(cli: &Cli, argv: Vec<String>) -> Result<()> {
    let start = Instant::now();
    let (cfg, config_name) = load_config(cli)?;
    let mut out = Outputs::new(&cli.out)?;
    let (command, seed) = match &cli.command {
        Command::Simulate(a) => (cmd_simulate(&cfg, a, &mut out)?, Some(a.seed)),
        Command::SolveSdp(a) => (cmd_solve_sdp(&cfg, a, &mut out)?, None),
        Command::SolveHjb(a) => (cmd_solve_hjb(&cfg, a, &mut out)?, None),
        Command::TrainNn(a) => (cmd_train_nn(&cfg, a, &mut out)?, Some(a.seed)),
        Command::Evaluate(a) => (cmd_evaluate(&cfg, a, &mut out)?, Some(a.seed)),
        Command::Assess(a) => (cmd_assess(&cfg, a, &mut out)?, Some(a.seed)),
    };
    let manifest = Manifest {
        tool: "fishquota",
        version: env!("CARGO_PKG_VERSION"),
        command: command.to_string(),
        argv,
        config: config_name,
        model: cfg,
        seed,
        threads: cli.threads,
        out_dir: cli.out.display().to_string(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        files: out.records()?,
    };
    let name = format!("{command}.manifest.json");
    let tmp = cli.out.join(format!(".{name}.tmp"));
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(&tmp, text + "\n").map_err(|e| Error::file(&tmp, e))?;
    let dst = cli.out.join(&name);
    std::fs::rename(&tmp, &dst).map_err(|e| Error::file(&dst, e))?;
    Ok(())
}

fn cmd_simulate(cfg: &ModelConfig, a: &SimulateArgs, out: &mut Outputs) -> Result<&'static str> {
    let policy = load_policy(&a.policy, cfg)?;
    let x0 = parse_state(&a.x0, cfg.d)?;
    let noise = NoisePath::generate(a.seed, cfg.steps, cfg.d, cfg.h(), a.noise.into());
    let traj = model::simulate(cfg, &*policy, &x0, &noise)?;
    let free = ConstantPolicy::no_quota(cfg.d, cfg.u_min, cfg.u_max);
    let base = model::simulate(cfg, &free, &x0, &noise)?;
    for (name, t) in [("trajectory.tsv", &traj), ("trajectory_noquota.tsv", &base)] {
        out.write(name, |w| {
            writeln!(
                w,
                "# cost {} tracking {} quota {} variation {}",
                t.total_cost, t.cost_tracking, t.cost_quota, t.cost_variation
            )?;
            t.write_tsv(w)
        })?;
    }
    log::info!("cost {:.6} (no quota {:.6})", traj.total_cost, base.total_cost);
    Ok("simulate")
}

fn cmd_solve_sdp(cfg: &ModelConfig, a: &SdpArgs, out: &mut Outputs) -> Result<&'static str> {
    let quant = match &a.quant_grid {
        Some(p) => load_grid(p)?,
        None => generate_1d(a.quant_order)?,
    };
    let settings = SdpSettings {
        intervals: a.intervals,
        length: a.length,
        search: match a.levels {
            Some(n) => ControlSearch::Levels(n),
            None => ControlSearch::Golden(a.golden_iters),
        },
    };
    let g = sdp::solve(cfg, &settings, &quant)?;
    let policy = sdp::policy_of(&g);
    out.write("quantizer.tsv", |w| quant.write_tsv(w))?;
    out.write("sdp_policy.tsv", |w| policy.write_tsv(w))?;
    let ts_u = step_times(cfg.horizon, g.steps(), g.steps());
    let ts_v = step_times(cfg.horizon, g.steps(), g.steps() + 1);
    out.write("sdp_control.tsv", |w| write_surface(w, &g.x_nodes, &ts_u, |m, j| g.controls[m][j]))?;
    out.write("sdp_value.tsv", |w| write_surface(w, &g.x_nodes, &ts_v, |m, j| g.values[m][j]))?;
    Ok("solve-sdp")
}

fn cmd_solve_hjb(cfg: &ModelConfig, a: &HjbArgs, out: &mut Outputs) -> Result<&'static str> {
    let mut settings = HjbSettings::for_dim(cfg.d);
    if let Some(n) = a.nodes {
        settings.nodes = vec![n; cfg.d];
    }
    if let Some(m) = a.hjb_steps {
        settings.steps = m;
    }
    settings.length = a.length;
    settings.memory_budget = a.memory_budget_mb.saturating_mul(1 << 20);
    let g = hjb::solve(cfg, &settings)?;
    let policy = g.policy();
    out.write("hjb_policy.tsv", |w| policy.write_tsv(w))?;
    let m = g.steps();
    let ts_u = step_times(cfg.horizon, m, m);
    if cfg.d == 1 {
        let xs: Vec<f64> = (0..g.grid.dims[0]).map(|k| k as f64 * g.grid.spacing(0)).collect();
        let ts_v = step_times(cfg.horizon, m, m + 1);
        out.write("hjb_control.tsv", |w| write_surface(w, &xs, &ts_u, |s, j| g.controls[s][j]))?;
        out.write("hjb_value.tsv", |w| write_surface(w, &xs, &ts_v, |s, j| g.values[s][j]))?;
    } else {
        let through = match &a.slice_at {
            Some(s) => parse_state(s, cfg.d)?,
            None => cfg.x_desired.clone(),
        };
        let xs: Vec<f64> = (0..g.grid.dims[0]).map(|k| k as f64 * g.grid.spacing(0)).collect();
        slice_files(out, "hjb", &policy, &through, &xs, &ts_u)?;
    }
    Ok("solve-hjb")
}

fn cmd_train_nn(cfg: &ModelConfig, a: &NnArgs, out: &mut Outputs) -> Result<&'static str> {
    let hidden = match &a.hidden {
        Some(s) => s
            .split(',')
            .map(|v| v.trim().parse::<usize>().map_err(|_| Error::invalid(format!("bad width `{v}`"))))
            .collect::<Result<Vec<_>>>()?,
        None if cfg.d >= 5 => vec![2048],
        None => vec![100, 100],
    };
    let range = parse_sweep_range(&a.x0_range)?;
    let mut tc = TrainConfig::new(hidden);
    tc.init_seed = a.seed;
    tc.batches.seed = a.seed;
    tc.batches.batch = a.batch;
    tc.batches.eval_batch = a.eval_batch;
    tc.batches.x0_low = range.0;
    tc.batches.x0_high = range.1;
    tc.adam.step = a.step;
    let trained = match a.optimizer {
        Optimizer::Adam => {
            tc.adam.iterations = a.iterations.unwrap_or(2000);
            nn::train_adam(cfg, &tc)?
        }
        Optimizer::Cg => {
            tc.cg.max_iters = a.iterations.unwrap_or(40);
            nn::train_cg(cfg, &tc)?
        }
    };
    let p = &trained.policy;
    let ckpt = out.path("nn.ckpt");
    p.save(&ckpt)?;
    out.write("nn_params.tsv", |w| p.write_tsv(w))?;
    out.write("nn_history.tsv", |w| {
        writeln!(w, "iteration\tloss\tgrad_norm\teval_loss")?;
        for r in &trained.result.history {
            let e = r.eval_loss.map(|v| v.to_string()).unwrap_or_else(|| "NaN".into());
            writeln!(w, "{}\t{}\t{}\t{e}", r.iteration, r.loss, r.grad_norm)?;
        }
        Ok(())
    })?;
    let xs: Vec<f64> = (0..=60).map(|k| k as f64 * 0.05).collect();
    let ts = step_times(cfg.horizon, cfg.steps, cfg.steps);
    if cfg.d == 1 {
        out.write("nn_control.tsv", |w| write_policy_slice(w, p, 0, 0, &[0.0], &xs, &ts))?;
    } else {
        let through = match &a.slice_at {
            Some(s) => parse_state(s, cfg.d)?,
            None => cfg.x_desired.clone(),
        };
        slice_files(out, "nn", p, &through, &xs, &ts)?;
    }
    Ok("train-nn")
}

fn parse_sweep_range(s: &str) -> Result<(f64, f64)> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| Error::invalid(format!("range `{s}` is not low:high")))?;
    let lo: f64 = a.trim().parse().map_err(|_| Error::invalid(format!("bad range `{s}`")))?;
    let hi: f64 = b.trim().parse().map_err(|_| Error::invalid(format!("bad range `{s}`")))?;
    if !(lo <= hi) {
        return Err(Error::invalid(format!("empty range `{s}`")));
    }
    Ok((lo, hi))
}

fn cmd_evaluate(cfg: &ModelConfig, a: &EvaluateArgs, out: &mut Outputs) -> Result<&'static str> {
    if a.policies.is_empty() {
        return Err(Error::invalid("no policies given"));
    }
    let policies: Vec<(String, Arc<dyn Policy>)> = a
        .policies
        .iter()
        .map(|s| load_policy(s, cfg).map(|p| (s.clone(), p)))
        .collect::<Result<_>>()?;
    let x0s: Vec<Vec<f64>> = parse_sweep(&a.x0_sweep)?.into_iter().map(|s| vec![s; cfg.d]).collect();
    let k = a.samples.unwrap_or(cfg.samples);
    let table = match &a.mesh_factors {
        None => assess::compare_policies(cfg, &policies, &x0s, k, a.seed)?,
        Some(f) => mesh_table(cfg, &policies, &x0s, k, a.seed, f)?,
    };
    out.write("costs.tsv", |w| table.write_tsv(w))?;
    Ok("evaluate")
}

/// Cost table over refined meshes `M * n`; every mesh sees the same
/// Brownian paths, drawn on the finest one and summed down.
fn mesh_table(
    cfg: &ModelConfig,
    policies: &[(String, Arc<dyn Policy>)],
    x0s: &[Vec<f64>],
    k: usize,
    seed: u64,
    factors: &str,
) -> Result<assess::CostTable> {
    let factors: Vec<usize> = factors
        .split(',')
        .map(|v| v.trim().parse::<usize>().map_err(|_| Error::invalid(format!("bad factor `{v}`"))))
        .collect::<Result<_>>()?;
    let finest = *factors.iter().max().ok_or_else(|| Error::invalid("no mesh factors"))?;
    if factors.iter().any(|&f| f == 0 || finest % f != 0) {
        return Err(Error::invalid("mesh factors must divide the largest one"));
    }
    let fine_cfg = cfg.with_steps(cfg.steps * finest);
    let fine: Vec<NoisePath> = sample_seeds(seed, k)
        .into_iter()
        .map(|s| NoisePath::generate(s, fine_cfg.steps, cfg.d, fine_cfg.h(), NoiseKind::Independent))
        .collect();
    let mut cells = Vec::new();
    for &f in &factors {
        let mcfg = cfg.with_steps(cfg.steps * f);
        let paths: Vec<NoisePath> = fine.iter().map(|p| p.coarsen(finest / f)).collect::<Result<_>>()?;
        for x0 in x0s {
            for (name, p) in policies {
                cells.push(assess::CostCell {
                    x0: x0.clone(),
                    policy: format!("{name}@{}", mcfg.steps),
                    result: model::mc_cost_paths(&mcfg, &**p, x0, &paths).map_err(|e| e.to_string()),
                });
            }
        }
    }
    Ok(assess::CostTable { cells })
}

fn parse_kappa(s: &str) -> Result<Vec<f64>> {
    match s {
        "three" | "3d" => Ok(KAPPA_3.to_vec()),
        "five" | "5d" => Ok(KAPPA_5.to_vec()),
        _ => parse_list(s),
    }
}

fn cmd_assess(cfg: &ModelConfig, a: &AssessArgs, out: &mut Outputs) -> Result<&'static str> {
    let kappa = match &a.kappa {
        Some(s) => parse_kappa(s)?,
        None => cfg.kappa.clone(),
    };
    let d = (kappa.len() as f64).sqrt().round() as usize;
    let base = ModelConfig {
        r: vec![cfg.r[0]; d],
        sigma: vec![cfg.sigma[0]; d],
        alpha: vec![cfg.alpha[0]; d],
        x_desired: vec![cfg.x_desired[0]; d],
        d,
        kappa: kappa.clone(),
        ..cfg.clone()
    };
    let one_d_cfg = assess::reference_config(&base, a.y_star);
    let v = load_policy(&a.policy1d, &one_d_cfg)?;
    let spec = OracleSpec::new(kappa.clone(), v.clone(), a.y_star, true)?;
    let mut dev = Vec::new();
    for (label, kind) in [("common", NoiseKind::Common), ("independent", NoiseKind::Independent)] {
        dev.push((label, assess::verify_commutation(&base, &spec, a.y0, a.seed, kind)?));
    }
    out.write("commutation.tsv", |w| {
        writeln!(w, "# kappa condition number {}", spec.condition)?;
        writeln!(w, "noise\ty0\tdeviation")?;
        for (label, v) in &dev {
            writeln!(w, "{label}\t{}\t{v}", a.y0)?;
        }
        Ok(())
    })?;
    let default_point = spec.state_for(a.y_star);
    let mut rows = Vec::new();
    for axis in 0..d {
        let fixed = match a.fixed_point.get(axis) {
            Some(s) => parse_state(s, d)?,
            None => default_point.clone(),
        };
        let th = assess::predict_thresholds(&kappa, axis, &fixed, a.y_star, a.length)?;
        rows.push((axis, fixed, th));
    }
    let measured = assess::switch_point(&*v, 0.5 * cfg.horizon, 0.0, a.length);
    out.write("thresholds.tsv", |w| {
        match measured {
            Some(y) => writeln!(w, "# scalar policy crosses mid-range at y = {y} (t = T/2)")?,
            None => writeln!(w, "# scalar policy does not cross mid-range at t = T/2")?,
        }
        writeln!(w, "axis\tcomponent\tfixed\tkind\tvalue")?;
        for (axis, fixed, th) in &rows {
            let fx = fixed.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
            for (j, t) in th.iter().enumerate() {
                let (kind, val) = match *t {
                    Threshold::Switch { at, rising } => (if rising { "switch-up" } else { "switch-down" }, at),
                    Threshold::Constant { y } => ("constant", y),
                    Threshold::Outside { at } => ("outside", at),
                };
                writeln!(w, "X{}\tu{}\t{fx}\t{kind}\t{val}", axis + 1, j + 1)?;
            }
        }
        Ok(())
    })?;
    Ok("assess")
}

/// Entry point shared by the binary: parses, runs, and maps failures to
/// exit codes.
pub fn main_with_args(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(cli, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
