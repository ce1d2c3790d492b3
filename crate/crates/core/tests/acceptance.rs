//! Acceptance suite. Runs every criterion at its stated tolerance, prints
//! one PASS/FAIL line each and exits non-zero if any fails.
//!
//! `cargo test -p fishquota --test acceptance -- 3 5` runs a subset.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use fishquota::assess::{self, OracleSpec, Threshold};
use fishquota::hjb::{self, HjbSettings};
use fishquota::model::{mc_cost_paths, sample_seeds, ModelConfig, NoiseKind, NoisePath, KAPPA_3, KAPPA_5};
use fishquota::nn::{self, TrainConfig};
use fishquota::policy::{ConstantPolicy, Policy};
use fishquota::quantization::{generate_1d, stationarity_residual};
use fishquota::sdp::{self, ControlSearch, SdpSettings};

use common::{gradient_fd_error, quantizer_moments, BruteForceDp};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn x0_sweep() -> Vec<f64> {
    (0..10).map(|k| 0.5 + 0.1 * k as f64).collect()
}

fn crn_paths(cfg: &ModelConfig, seed: u64, k: usize) -> Vec<NoisePath> {
    sample_seeds(seed, k)
        .into_iter()
        .map(|s| NoisePath::generate(s, cfg.steps, cfg.d, cfg.h(), NoiseKind::Independent))
        .collect()
}

fn cost_curve(cfg: &ModelConfig, policy: &dyn Policy, paths: &[NoisePath]) -> Vec<f64> {
    x0_sweep()
        .iter()
        .map(|&x| mc_cost_paths(cfg, policy, &vec![x; cfg.d], paths).unwrap().mean)
        .collect()
}

fn argmin(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate() {
        if *v < xs[best] {
            best = i;
        }
    }
    best
}

fn fmt_curve(c: &[f64]) -> String {
    c.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" ")
}

/// The three single-species solutions shared by criteria 6 and 8.
struct Methods {
    sdp: Arc<dyn Policy>,
    hjb: Arc<dyn Policy>,
    nn: Arc<dyn Policy>,
    times: [Duration; 3],
}

fn solve_methods(cfg: &ModelConfig) -> Methods {
    let t = Instant::now();
    let g = sdp::solve(cfg, &SdpSettings::default(), &generate_1d(11).unwrap()).unwrap();
    let sdp: Arc<dyn Policy> = Arc::new(sdp::policy_of(&g));
    let t_sdp = t.elapsed();
    let t = Instant::now();
    let hjb: Arc<dyn Policy> = Arc::new(hjb::solve(cfg, &HjbSettings::single_species()).unwrap().policy());
    let t_hjb = t.elapsed();
    let t = Instant::now();
    let nn: Arc<dyn Policy> = Arc::new(nn::train_adam(cfg, &TrainConfig::new(vec![100, 100])).unwrap().policy);
    let t_nn = t.elapsed();
    Methods {
        sdp,
        hjb,
        nn,
        times: [t_sdp, t_hjb, t_nn],
    }
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let base = ModelConfig::single_species();
    let three = ModelConfig::three_species();
    let archs: [(&ModelConfig, &[usize]); 4] = [(&base, &[20]), (&base, &[100, 100]), (&three, &[32]), (&three, &[32, 32])];
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (i, (cfg, hidden)) in archs.iter().enumerate() {
        let e = gradient_fd_error(cfg, hidden, 20, 11 + i as u64);
        parts.push(format!("d={} {:?}: {e:.2e}", cfg.d, hidden));
        worst = worst.max(e);
    }
    let el = t.elapsed();
    outcome(
        worst < 1e-5 && el < Duration::from_secs(30),
        format!("max rel err {worst:.2e} [{}], {:.1}s", parts.join("; "), el.as_secs_f64()),
    )
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let cfg = ModelConfig {
        sigma: vec![0.0],
        alpha: vec![0.0],
        beta: 0.0,
        ..ModelConfig::single_species()
    }
    .with_steps(3);
    let settings = SdpSettings {
        intervals: 8,
        length: 3.0,
        search: ControlSearch::Levels(21),
    };
    let g = sdp::solve(&cfg, &settings, &generate_1d(11).unwrap()).unwrap();
    let oracle = BruteForceDp::new(&cfg, 8, 3.0, 21);
    let mut worst: f64 = 0.0;
    for m in 0..=cfg.steps {
        for (j, &x) in g.x_nodes.iter().enumerate() {
            worst = worst.max((g.values[m][j] - oracle.value(m, x)).abs());
        }
    }
    let el = t.elapsed();
    outcome(
        worst < 1e-10 && el < Duration::from_secs(5),
        format!("max |V - V_enum| = {worst:.2e}, {:.2}s", el.as_secs_f64()),
    )
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for q in [1, 2, 5, 11, 20] {
        let g = generate_1d(q).unwrap();
        let (sum, mean, m2) = quantizer_moments(&g.nodes, &g.weights);
        let res = stationarity_residual(&g);
        let ok = (sum - 1.0).abs() < 1e-12 && mean.abs() < 1e-10 && (m2 - 1.0).abs() < 1e-3 && res < 1e-8;
        pass &= ok;
        parts.push(format!(
            "Q={q}{} sum-1 {:.1e} mean {:.1e} var {m2:.4} resid {res:.1e}",
            if ok { "" } else { " (x)" },
            sum - 1.0,
            mean
        ));
    }
    let el = t.elapsed();
    pass &= el < Duration::from_secs(10);
    outcome(pass, format!("{}; {:.2}s", parts.join("; "), el.as_secs_f64()))
}

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let unit = ModelConfig::unit_species();
    let g = sdp::solve(&unit, &SdpSettings::default(), &generate_1d(11).unwrap()).unwrap();
    let v: Arc<dyn Policy> = Arc::new(sdp::policy_of(&g));
    let k2 = vec![KAPPA_3[0], KAPPA_3[1], KAPPA_3[3], KAPPA_3[4]];
    let mut pass = true;
    let mut parts = Vec::new();
    for kappa in [k2, KAPPA_3.to_vec(), KAPPA_5.to_vec()] {
        let d = (kappa.len() as f64).sqrt() as usize;
        let cfg = ModelConfig::multi_species(d, kappa.clone());
        let spec = OracleSpec::new(kappa, v.clone(), 1.0, true).unwrap();
        let mut common: f64 = 0.0;
        let mut indep = f64::INFINITY;
        for seed in 1..=5 {
            for y0 in [0.6, 0.8, 1.2] {
                common = common.max(assess::verify_commutation(&cfg, &spec, y0, seed, NoiseKind::Common).unwrap());
                indep = indep.min(assess::verify_commutation(&cfg, &spec, y0, seed, NoiseKind::Independent).unwrap());
            }
        }
        pass &= common < 1e-12 && indep > 1e-3;
        parts.push(format!("d={d}: common {common:.1e}, independent {indep:.1e}"));
    }
    let el = t.elapsed();
    pass &= el < Duration::from_secs(5);
    outcome(pass, format!("{}; {:.2}s", parts.join("; "), el.as_secs_f64()))
}

fn criterion_5() -> Outcome {
    let slices: [(usize, [f64; 3], [Option<f64>; 3]); 3] = [
        (0, [0.0, 0.685, 0.839], [Some(0.56), Some(0.9), Some(0.9)]),
        (1, [0.89, 0.0, 0.89], [Some(0.7), Some(0.68), Some(0.2)]),
        (2, [0.89, 0.685, 0.0], [None, None, Some(0.84)]),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (axis, fixed, expected) in slices {
        let th = assess::predict_thresholds(&KAPPA_3, axis, &fixed, 1.0, 3.0).unwrap();
        for (j, (got, want)) in th.iter().zip(expected).enumerate() {
            let (ok, shown) = match (got, want) {
                (Threshold::Switch { at, .. }, Some(w)) => ((at - w).abs() <= 0.01 + 1e-12, format!("{at:.4} vs {w}")),
                (Threshold::Constant { .. }, None) => (true, "constant".to_string()),
                (other, w) => (false, format!("{other:?} vs {w:?}")),
            };
            pass &= ok;
            parts.push(format!("X{} u{}: {shown}{}", axis + 1, j + 1, if ok { "" } else { " (x)" }));
        }
    }
    outcome(pass, parts.join("; "))
}

fn criterion_6(m: &Methods, curves: &BTreeMap<&str, Vec<f64>>) -> Outcome {
    let (s, h, n) = (&curves["sdp"], &curves["hjb"], &curves["nn"]);
    let sdp_hjb = s.iter().zip(h).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let nn_hjb = n.iter().zip(h).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let [ts, th, tn] = m.times;
    let pass = sdp_hjb < 0.02
        && nn_hjb < 0.03
        && ts < Duration::from_secs(60)
        && th < Duration::from_secs(10)
        && tn < Duration::from_secs(600);
    outcome(
        pass,
        format!(
            "max|SDP-HJB| {sdp_hjb:.4}, max|NN-HJB| {nn_hjb:.4}; SDP {:.2}s HJB {:.2}s NN {:.1}s",
            ts.as_secs_f64(),
            th.as_secs_f64(),
            tn.as_secs_f64()
        ),
    )
}

fn criterion_7(cfg: &ModelConfig) -> Outcome {
    let meshes = [50usize, 100, 200];
    let finest = *meshes.last().unwrap();
    let fine_cfg = cfg.with_steps(finest);
    let fine = crn_paths(&fine_cfg, 7, cfg.samples);
    let mut sdp_curves = Vec::new();
    let mut nn_curves = Vec::new();
    for &n in &meshes {
        let mcfg = cfg.with_steps(n);
        let paths: Vec<NoisePath> = fine.iter().map(|p| p.coarsen(finest / n).unwrap()).collect();
        let g = sdp::solve(&mcfg, &SdpSettings::default(), &generate_1d(11).unwrap()).unwrap();
        sdp_curves.push(cost_curve(&mcfg, &sdp::policy_of(&g), &paths));
        let net = nn::train_adam(&mcfg, &TrainConfig::new(vec![100, 100])).unwrap().policy;
        nn_curves.push(cost_curve(&mcfg, &net, &paths));
    }
    let spread = |curves: &[Vec<f64>]| {
        (0..curves[0].len())
            .map(|i| {
                let col: Vec<f64> = curves.iter().map(|c| c[i]).collect();
                col.iter().cloned().fold(f64::MIN, f64::max) - col.iter().cloned().fold(f64::MAX, f64::min)
            })
            .fold(0.0, f64::max)
    };
    let (s, n) = (spread(&sdp_curves), spread(&nn_curves));
    outcome(s <= 0.01 && n <= 0.01, format!("max spread over M=50/100/200: SDP {s:.4}, NN {n:.4}"))
}

fn criterion_8(curves: &BTreeMap<&str, Vec<f64>>) -> Outcome {
    let xs = x0_sweep();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, c) in curves {
        let at = xs[argmin(c)];
        let ok = (0.9 - 1e-9..=1.2 + 1e-9).contains(&at);
        pass &= ok;
        parts.push(format!("{name} min at X0={at:.1} [{}]", fmt_curve(c)));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_9() -> Outcome {
    let cfg = ModelConfig::three_species();
    let t = Instant::now();
    let g = hjb::solve(&cfg, &HjbSettings::three_species()).unwrap();
    let el = t.elapsed();
    let policy = g.policy();
    let free = ConstantPolicy::no_quota(3, cfg.u_min, cfg.u_max);
    let paths = crn_paths(&cfg, 9, cfg.samples);
    let mut pass = el < Duration::from_secs(900);
    let mut parts = Vec::new();
    for x in [0.7, 1.3] {
        let x0 = vec![x; 3];
        let a = mc_cost_paths(&cfg, &policy, &x0, &paths).unwrap().mean;
        let b = mc_cost_paths(&cfg, &free, &x0, &paths).unwrap().mean;
        pass &= b - a > 0.0;
        parts.push(format!("X0={x}: HJB {a:.4} vs no quota {b:.4}"));
    }
    outcome(pass, format!("{}; solve {:.1}s", parts.join("; "), el.as_secs_f64()))
}

fn criterion_10() -> Outcome {
    let cfg = ModelConfig::five_species();
    let t = Instant::now();
    let net = nn::train_adam(&cfg, &TrainConfig::new(vec![2048])).unwrap().policy;
    let el = t.elapsed();
    let free = ConstantPolicy::no_quota(5, cfg.u_min, cfg.u_max);
    let paths = crn_paths(&cfg, 10, cfg.samples);
    let x0 = vec![1.0; 5];
    let a = mc_cost_paths(&cfg, &net, &x0, &paths).unwrap().mean;
    let b = mc_cost_paths(&cfg, &free, &x0, &paths).unwrap().mean;
    let pass = a <= b - 0.2 * b.abs() && el < Duration::from_secs(1200);
    outcome(
        pass,
        format!("NN {a:.4} vs no quota {b:.4} (needs <= {:.4}); train {:.1}s", b - 0.2 * b.abs(), el.as_secs_f64()),
    )
}

fn run_cli(out: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_fishquota"))
        .arg("--threads")
        .arg("1")
        .arg("--out")
        .arg(out)
        .args(args)
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

/// Every file in `dir` except manifests, plus each manifest's file list.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut m = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        let name = p.file_name().unwrap().to_string_lossy().to_string();
        let bytes = std::fs::read(&p).unwrap();
        if name.ends_with(".manifest.json") {
            let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
            m.insert(name, v["files"].to_string().into_bytes());
        } else {
            m.insert(name, bytes);
        }
    }
    m
}

fn criterion_11() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let runs: Vec<(&str, Vec<String>)> = vec![
            ("solve-sdp", vec!["solve-sdp".into()]),
            ("solve-hjb", vec!["solve-hjb".into()]),
            (
                "solve-hjb-3d",
                vec!["--preset".into(), "three".into(), "solve-hjb".into(), "--nodes".into(), "9".into(), "--hjb-steps".into(), "10".into()],
            ),
            (
                "train-nn-adam",
                vec!["train-nn".into(), "--hidden".into(), "16,16".into(), "--iterations".into(), "30".into(), "--seed".into(), "4".into()],
            ),
            (
                "train-nn-cg",
                vec![
                    "train-nn".into(),
                    "--optimizer".into(),
                    "cg".into(),
                    "--hidden".into(),
                    "16".into(),
                    "--iterations".into(),
                    "5".into(),
                    "--seed".into(),
                    "4".into(),
                ],
            ),
    ];
    let names = ["solve-sdp", "solve-hjb", "solve-hjb-3d", "train-nn-adam", "train-nn-cg", "simulate", "evaluate", "evaluate-mesh", "assess"];
    let root = tmp.path().join("run");
    let unit = tmp.path().join("unit");
    let mut pass = true;
    let mut parts = Vec::new();
    let mut snaps: Vec<BTreeMap<String, BTreeMap<String, Vec<u8>>>> = Vec::new();
    for rep in 0..2 {
        for d in [&root, &unit] {
            if d.exists() {
                std::fs::remove_dir_all(d).unwrap();
            }
        }
        let mut ok = true;
        for (name, args) in &runs {
            let a: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
            ok &= run_cli(&root.join(name), &a);
        }
        let sdp_file = format!("sdp:{}", root.join("solve-sdp/sdp_policy.tsv").display());
        let hjb_file = format!("hjb:{}", root.join("solve-hjb/hjb_policy.tsv").display());
        let nn_file = format!("nn:{}", root.join("train-nn-adam/nn.ckpt").display());
        ok &= run_cli(
            &root.join("simulate"),
            &["simulate", "--policy", &sdp_file, "--x0", "0.7", "--seed", "3"],
        );
        ok &= run_cli(
            &root.join("evaluate"),
            &["evaluate", "--policies", &sdp_file, &hjb_file, &nn_file, "const:0.75", "-K", "50", "--seed", "3"],
        );
        ok &= run_cli(
            &root.join("evaluate-mesh"),
            &["evaluate", "--policies", &sdp_file, "-K", "20", "--seed", "3", "--mesh-factors", "1,2,4", "--x0-sweep", "0.8,1.2"],
        );
        ok &= run_cli(&unit, &["--preset", "unit", "solve-sdp"]);
        let unit_file = format!("sdp:{}", unit.join("sdp_policy.tsv").display());
        ok &= run_cli(
            &root.join("assess"),
            &["--preset", "three", "assess", "--policy1d", &unit_file, "--seed", "3"],
        );
        if !ok {
            parts.push(format!("run {rep}: a command failed"));
        }
        pass &= ok;
        snaps.push(names.iter().map(|n| (n.to_string(), snapshot(&root.join(n)))).collect());
    }
    for name in names {
        let (a, b) = (&snaps[0][name], &snaps[1][name]);
        let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
        let same = !a.is_empty() && a.len() == b.len() && differing.is_empty();
        if !same {
            parts.push(format!("{name} differs: {differing:?}"));
        }
        pass &= same;
    }
    if parts.is_empty() {
        parts.push(format!("{} commands byte-identical across two runs", names.len()));
    }
    outcome(pass, parts.join("; "))
}

fn main() {
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| filter.is_empty() || filter.contains(&n);
    let names = [
        "gradient oracle",
        "DP brute-force equivalence",
        "quantization moments",
        "kappa-commutation exactness",
        "threshold reproduction",
        "method parity (1D)",
        "mesh-refinement invariance",
        "cost-curve shape",
        "3-species HJB beats no quota",
        "5-species NN beats no quota",
        "CLI determinism",
    ];
    let cfg = ModelConfig::single_species();
    let mut failed = 0;
    let mut report = |n: usize, o: Outcome| {
        println!("{} criterion {n:>2} ({}): {}", if o.pass { "PASS" } else { "FAIL" }, names[n - 1], o.detail);
        if !o.pass {
            failed += 1;
        }
    };
    let simple: [(usize, fn() -> Outcome); 5] = [(1, criterion_1), (2, criterion_2), (3, criterion_3), (4, criterion_4), (5, criterion_5)];
    for (n, f) in simple {
        if wanted(n) {
            report(n, f());
        }
    }
    if wanted(6) || wanted(8) {
        let methods = solve_methods(&cfg);
        let paths = crn_paths(&cfg, 6, cfg.samples);
        let mut curves = BTreeMap::new();
        curves.insert("sdp", cost_curve(&cfg, &*methods.sdp, &paths));
        curves.insert("hjb", cost_curve(&cfg, &*methods.hjb, &paths));
        curves.insert("nn", cost_curve(&cfg, &*methods.nn, &paths));
        if wanted(6) {
            report(6, criterion_6(&methods, &curves));
        }
        if wanted(8) {
            report(8, criterion_8(&curves));
        }
    }
    if wanted(7) {
        report(7, criterion_7(&cfg));
    }
    let heavy: [(usize, fn() -> Outcome); 3] = [(9, criterion_9), (10, criterion_10), (11, criterion_11)];
    for (n, f) in heavy {
        if wanted(n) {
            report(n, f());
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
