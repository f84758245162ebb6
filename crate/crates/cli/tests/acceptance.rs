//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Criteria in `EXPECTED_FAIL` are known not to hold with the shipped
//! defaults. The target fails when any other criterion fails, or when an
//! expected failure starts passing.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use gpgd::constants::mc_beta;
use gpgd::gpgd::{gpgd_run, GpgdConfig};
use gpgd::harness::{
    run_joint_model, run_nipr_stability, run_outlier_tradeoff, run_phase_transition_alpha, run_stepsize_study,
    run_theorem_check, ExperimentKind, ExperimentSpec, RunStatus,
};
use gpgd::linalg::{dist2, norm2};
use gpgd::models::Projection;
use gpgd::nipr::{loss_gradient, training_loss, LossKind, NoiseDraws, Nonlinearity, ToyPrior, TrainConfig};
use gpgd::operators::{gaussian_operator, BackProjection, MeasurementOperator};
use gpgd::rng::{derive_seed, gaussian_vec, rng_from_seed, sparse_gaussian};

const EXPECTED_FAIL: [usize; 2] = [5, 10];

// 1
const TRIVIAL_RUNTIME: Duration = Duration::from_millis(1);
// 2
const NOISELESS_TOL: f64 = 1e-6;
const NOISELESS_ITERS: usize = 500;
const NOISELESS_TRIALS: usize = 50;
const NOISELESS_REQUIRED: usize = 45;
const NOISELESS_K: usize = 9;
const NOISELESS_RUNTIME: Duration = Duration::from_secs(30);
// 3
const ALPHA_CELL_VIOLATIONS: usize = 1;
const ALPHA_RUNTIME: Duration = Duration::from_secs(300);
// 4
const OUTLIER_SUCCESS: f64 = 0.05;
const OUTLIER_FAILURE: f64 = 0.5;
const OUTLIER_BASELINE_MIN_S: usize = 5;
const OUTLIER_RUNTIME: Duration = Duration::from_secs(300);
// 5
const BOUND_CASES: usize = 5;
const BOUND_TOL: f64 = 1e-9;
const BOUND_RUNTIME: Duration = Duration::from_secs(60);
// 6
const BETA_ALPHAS: [f64; 3] = [0.25, 0.5, 1.0];
const BETA_SLACK: f64 = 0.01;
const BETA_SAMPLES: usize = 10_000;
const BETA_HT_SAMPLES: usize = 100_000;
const BETA_HT_LIMIT: f64 = 1.618;
const BETA_N: usize = 20;
const BETA_K: usize = 3;
const BETA_RUNTIME: Duration = Duration::from_secs(30);
// 7
const GRAD_TOL: f64 = 1e-4;
const GRAD_LAMBDAS: [f64; 3] = [0.0, 0.005, 0.1];
const GRAD_SEEDS: u64 = 5;
const GRAD_STEP: f64 = 1e-6;
const GRAD_RUNTIME: Duration = Duration::from_secs(10);
// 8
const NIPR_OFFSET: usize = 50;
const NIPR_PAIRS: usize = 10;
const NIPR_WINS: usize = 7;
const NIPR_ERROR_RATIO: f64 = 0.2;
const NIPR_RUNTIME: Duration = Duration::from_secs(300);
// 9
const PRODUCT_SLACK: f64 = 0.01;
const PRODUCT_SAMPLES: usize = 10_000;
const JOINT_TOL: f64 = 1e-4;
const JOINT_RUNTIME: Duration = Duration::from_secs(60);
// 10
const STEP_SMALL: f64 = 0.3;
const STEP_LARGE: f64 = 0.6;
const STEP_K: usize = 12;
const STEP_SHIFT: usize = 3;
const STEP_PLATEAU_K: usize = 4;
const STEP_RUNTIME: Duration = Duration::from_secs(300);
// 11
const DETERMINISM_TRIALS: &str = "3";
const DETERMINISM_SEED: &str = "7";

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let took = start.elapsed();
    if took > limit {
        o.pass = false;
    }
    o.detail = format!("{} [{:.3?}, limit {:?}]", o.detail, took, limit);
    o
}

fn trivial_recovery() -> Outcome {
    let n = 64;
    let a = MeasurementOperator::identity(n);
    let cfg = GpgdConfig {
        mu: 1.0,
        max_iters: 1,
        rel_change_tol: 0.0,
        record_iterates: false,
    };
    let mut worst = 0.0_f64;
    let mut slowest = Duration::ZERO;
    for (i, k) in [1, 3, 8, 20].into_iter().enumerate() {
        let truth = sparse_gaussian(&mut rng_from_seed(derive_seed(1, 1, i as u64)), n, k);
        let y = a.apply(&truth).unwrap();
        let start = Instant::now();
        let tr = gpgd_run(
            &vec![0.0; n],
            &Projection::hard_threshold(k),
            &BackProjection::adjoint(&a),
            &a,
            &y,
            &cfg,
            Some(&truth),
        )
        .unwrap();
        slowest = slowest.max(start.elapsed());
        worst = worst.max(tr.errors().unwrap()[1]);
    }
    outcome(
        worst == 0.0 && slowest < TRIVIAL_RUNTIME,
        format!("largest error after one iteration {worst:e}, slowest run {slowest:.3?}"),
    )
}

fn noiseless_recovery() -> Outcome {
    let spec = ExperimentSpec::defaults(ExperimentKind::PhaseTransitionAlpha);
    let cfg = GpgdConfig {
        mu: spec.mu,
        max_iters: NOISELESS_ITERS,
        rel_change_tol: 0.0,
        record_iterates: false,
    };
    let mut hits = 0;
    for t in 0..NOISELESS_TRIALS {
        let seed = derive_seed(spec.seed, 0x2, t as u64);
        let a = gaussian_operator(spec.m, spec.n, derive_seed(seed, 0, 0)).unwrap();
        let truth = sparse_gaussian(&mut rng_from_seed(derive_seed(seed, 1, 0)), spec.n, NOISELESS_K);
        let y = a.apply(&truth).unwrap();
        let tr = gpgd_run(
            &vec![0.0; spec.n],
            &Projection::hard_threshold(NOISELESS_K),
            &BackProjection::adjoint(&a),
            &a,
            &y,
            &cfg,
            Some(&truth),
        )
        .unwrap();
        if tr.errors().unwrap().iter().any(|e| e / norm2(&truth) < NOISELESS_TOL) {
            hits += 1;
        }
    }
    outcome(
        hits >= NOISELESS_REQUIRED,
        format!(
            "{hits}/{NOISELESS_TRIALS} trials below {NOISELESS_TOL:e} (m={}, N={}, k={NOISELESS_K}, mu={})",
            spec.m, spec.n, spec.mu
        ),
    )
}

fn alpha_ordering() -> Outcome {
    let spec = ExperimentSpec::defaults(ExperimentKind::PhaseTransitionAlpha);
    let r = run_phase_transition_alpha(&spec).unwrap();
    let position = |edge: Option<usize>| -> i64 {
        edge.and_then(|k| spec.sparsity_grid.iter().position(|g| *g == k))
            .map_or(-1, |p| p as i64)
    };
    let edges: Vec<Option<usize>> = spec.alpha_grid.iter().map(|a| r.success_edge(*a)).collect();
    let violations: i64 = edges.windows(2).map(|w| (position(w[1]) - position(w[0])).max(0)).sum();
    let shown: Vec<String> = spec
        .alpha_grid
        .iter()
        .zip(&edges)
        .map(|(a, e)| format!("alpha {a}: {}", e.map_or("none".into(), |k| k.to_string())))
        .collect();
    outcome(
        violations <= ALPHA_CELL_VIOLATIONS as i64,
        format!("success edges {} ({violations} cell violations)", shown.join(", ")),
    )
}

fn outlier_tradeoff() -> Outcome {
    let spec = ExperimentSpec::defaults(ExperimentKind::OutlierTradeoff);
    let r = run_outlier_tradeoff(&spec).unwrap();
    let mut problems = Vec::new();
    let mut edges = Vec::new();
    for &k in &spec.sparsity_grid {
        let clean = r.cell(k, 0).map(|c| c.adapted_error);
        let full = r.cell(k, spec.m - 1).map(|c| c.adapted_error);
        if !clean.is_some_and(|e| e < OUTLIER_SUCCESS) {
            problems.push(format!("k={k}: s=0 error {clean:?}"));
        }
        if !full.is_some_and(|e| e > OUTLIER_FAILURE) {
            problems.push(format!("k={k}: s=m-1 error {full:?}"));
        }
        edges.push(r.success_edge(k));
    }
    if edges.windows(2).any(|w| w[1].unwrap_or(0) > w[0].unwrap_or(0)) {
        problems.push("edge increases with k".into());
    }
    let baseline_ok = r
        .cells
        .iter()
        .filter(|c| c.s >= OUTLIER_BASELINE_MIN_S)
        .all(|c| c.adjoint_error > OUTLIER_FAILURE);
    if !baseline_ok {
        problems.push("adjoint baseline succeeds with outliers".into());
    }
    let shown: Vec<String> = spec
        .sparsity_grid
        .iter()
        .zip(&edges)
        .map(|(k, e)| format!("k {k}: {}", e.map_or("none".into(), |s| s.to_string())))
        .collect();
    outcome(
        problems.is_empty(),
        format!(
            "largest s with error < {OUTLIER_SUCCESS}: {}; {}",
            shown.join(", "),
            if problems.is_empty() {
                "ok".into()
            } else {
                problems.join("; ")
            }
        ),
    )
}

fn recovery_bound() -> Outcome {
    let spec = ExperimentSpec {
        trials: BOUND_CASES,
        ..ExperimentSpec::defaults(ExperimentKind::TheoremCheck)
    };
    let r = run_theorem_check(&spec).unwrap();
    let holds = r
        .cases
        .iter()
        .all(|c| c.max_gap <= BOUND_TOL && c.max_gap_to_truth.is_none_or(|g| g <= BOUND_TOL));
    let best = r
        .attempts
        .iter()
        .map(|a| a.best_contraction)
        .fold(f64::INFINITY, f64::min);
    let admissible: Vec<String> = r
        .attempts
        .iter()
        .map(|a| format!("{}/{}", a.admissible, a.tried))
        .collect();
    let mut detail = format!(
        "N={}, m={}, k=1: admissible draws per variant {}, smallest delta*beta {best:.3}",
        spec.n,
        spec.m,
        admissible.join(" ")
    );
    if r.status() != RunStatus::Complete {
        let wide = ExperimentSpec { m: 64, ..spec.clone() };
        let s = run_theorem_check(&wide).unwrap();
        let worst = s.cases.iter().map(|c| c.max_gap).fold(f64::NEG_INFINITY, f64::max);
        detail += &format!(
            "; at m=64 the bound holds on {} cases, largest gap {worst:.3e} ({:?})",
            s.cases.len(),
            s.status()
        );
    }
    outcome(r.status() == RunStatus::Complete && holds, detail)
}

fn approximate_projection_beta() -> Outcome {
    let ht = Projection::hard_threshold(BETA_K);
    let base = mc_beta(&ht, BETA_N, BETA_SAMPLES, 11).unwrap();
    let wide = mc_beta(&ht, BETA_N, BETA_HT_SAMPLES, 12).unwrap();
    let mut ok = wide <= BETA_HT_LIMIT;
    let mut parts = vec![format!("hard threshold {wide:.4} over {BETA_HT_SAMPLES}")];
    for (i, alpha) in BETA_ALPHAS.into_iter().enumerate() {
        let p = Projection::p_alpha(BETA_K, alpha).unwrap();
        let b = mc_beta(&p, BETA_N, BETA_SAMPLES, 20 + i as u64).unwrap();
        ok &= b <= base + alpha + BETA_SLACK;
        parts.push(format!("alpha {alpha}: {b:.4} vs {:.4}", base + alpha + BETA_SLACK));
    }
    outcome(ok, parts.join(", "))
}

fn finite_difference(p: &ToyPrior, batch: &[Vec<f64>], cfg: &TrainConfig, noise: &NoiseDraws) -> Vec<f64> {
    let base = p.params();
    let mut q = p.clone();
    (0..base.len())
        .map(|i| {
            let mut w = base.clone();
            w[i] = base[i] + GRAD_STEP;
            q.set_params(&w).unwrap();
            let up = training_loss(&q, batch, cfg, noise).unwrap();
            w[i] = base[i] - GRAD_STEP;
            q.set_params(&w).unwrap();
            let down = training_loss(&q, batch, cfg, noise).unwrap();
            (up - down) / (2.0 * GRAD_STEP)
        })
        .collect()
}

fn nipr_gradient() -> Outcome {
    let mut worst = 0.0_f64;
    let mut checks = 0;
    for kind in [LossKind::Ae, LossKind::Pnp] {
        for lambda in GRAD_LAMBDAS {
            for seed in 0..GRAD_SEEDS {
                let p = ToyPrior::random(6, 3, Nonlinearity::Tanh, derive_seed(seed, 7, 0)).unwrap();
                let mut rng = rng_from_seed(derive_seed(seed, 7, 1));
                let batch: Vec<Vec<f64>> = (0..8).map(|_| gaussian_vec(&mut rng, 6, 1.0)).collect();
                let cfg = TrainConfig {
                    lambda,
                    loss_kind: kind,
                    ..TrainConfig::default()
                };
                let noise = match kind {
                    LossKind::Pnp => NoiseDraws::sample(batch.len(), 6, 0.1, derive_seed(seed, 7, 2)),
                    LossKind::Ae => NoiseDraws::none(),
                };
                let analytic = loss_gradient(&p, &batch, &cfg, &noise).unwrap().to_flat();
                let numeric = finite_difference(&p, &batch, &cfg, &noise);
                let err = dist2(&analytic, &numeric) / norm2(&analytic).max(norm2(&numeric));
                worst = worst.max(err);
                checks += 1;
            }
        }
    }
    outcome(
        worst < GRAD_TOL,
        format!("{checks} checks on a 6-3-6 prior, largest relative error {worst:.2e}"),
    )
}

fn nipr_stability() -> Outcome {
    let spec = ExperimentSpec {
        trials: NIPR_PAIRS,
        ..ExperimentSpec::defaults(ExperimentKind::NiprStability)
    };
    let r = run_nipr_stability(&spec).unwrap();
    if let Some(msg) = &r.aborted {
        return outcome(false, format!("aborted: {msg}"));
    }
    let wins = r.sm1_wins(NIPR_OFFSET);
    let (plain, reg) = r.mean_final_errors();
    let within = (reg - plain).abs() <= NIPR_ERROR_RATIO * plain;
    outcome(
        wins >= NIPR_WINS && within,
        format!(
            "lambda {} SM1({NIPR_OFFSET}) no larger in {wins}/{} pairs, mean final error {reg:.4} vs {plain:.4}",
            r.lambda,
            r.pairs.len()
        ),
    )
}

fn product_projection() -> Outcome {
    let (n1, k1, n2, k2) = (30, 3, 20, 2);
    let a = Projection::hard_threshold(k1);
    let b = Projection::hard_threshold(k2);
    let ba = mc_beta(&a, n1, PRODUCT_SAMPLES, 31).unwrap();
    let bb = mc_beta(&b, n2, PRODUCT_SAMPLES, 32).unwrap();
    let product = Projection::product(vec![(a, n1), (b, n2)]).unwrap();
    let bp = mc_beta(&product, n1 + n2, PRODUCT_SAMPLES, 33).unwrap();
    let beta_ok = bp <= ba.max(bb) + PRODUCT_SLACK;

    let spec = ExperimentSpec::defaults(ExperimentKind::JointModel);
    let r = run_joint_model(&spec).unwrap();
    let recovered: Vec<String> = r
        .cells
        .iter()
        .filter(|c| c.s > 0 && c.worst_signal_error < JOINT_TOL && c.worst_noise_error < JOINT_TOL)
        .map(|c| format!("(k={}, s={})", c.k, c.s))
        .collect();
    outcome(
        beta_ok && !recovered.is_empty(),
        format!(
            "product beta {bp:.4} vs components {ba:.4}/{bb:.4}; m={}, N={}: every trial below {JOINT_TOL:e} at {}",
            spec.m,
            spec.n,
            if recovered.is_empty() {
                "no cell".into()
            } else {
                recovered.join(" ")
            }
        ),
    )
}

fn step_size_tradeoff() -> Outcome {
    let spec = ExperimentSpec::defaults(ExperimentKind::StepSizeStudy);
    let r = run_stepsize_study(&spec).unwrap();
    let large_fails = r.failures_up_to(STEP_LARGE, STEP_K - STEP_SHIFT);
    let small_fails = r.failures_up_to(STEP_SMALL, STEP_K + STEP_SHIFT);
    let ordering = large_fails.is_empty() && !small_fails.is_empty();
    let worst = |mu: f64| {
        r.cells
            .iter()
            .filter(|c| c.mu == mu && c.k <= STEP_K)
            .map(|c| c.centile_error)
            .fold(0.0, f64::max)
    };
    let (ps, pl) = (r.plateau(STEP_SMALL).unwrap(), r.plateau(STEP_LARGE).unwrap());
    let plateau = r.trace_k == STEP_PLATEAU_K && ps < pl;
    outcome(
        ordering && plateau,
        format!(
            "worst centile error for k <= {STEP_K}: mu {STEP_SMALL} {:.4}, mu {STEP_LARGE} {:.4}; mu {STEP_SMALL} failures up to k={}: {small_fails:?}; plateau at k={}: {ps:.5} vs {pl:.5}",
            worst(STEP_SMALL),
            worst(STEP_LARGE),
            STEP_K + STEP_SHIFT,
            r.trace_k
        ),
    )
}

fn csv_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_gpgd");
    let mut differing = Vec::new();
    let mut files = 0;
    for kind in ExperimentKind::ALL {
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        let config = dirs[0].path().join("run.toml");
        std::fs::write(&config, ExperimentSpec::defaults(kind).to_config_string()).unwrap();
        let mut outputs = Vec::new();
        for d in &dirs {
            let status = Command::new(bin)
                .arg(kind.command())
                .arg("--config")
                .arg(&config)
                .args(["--seed", DETERMINISM_SEED, "--trials", DETERMINISM_TRIALS, "--out"])
                .arg(d.path().join("out.csv"))
                .output()
                .unwrap()
                .status;
            if !matches!(status.code(), Some(0) | Some(3)) {
                differing.push(format!("{} exited with {status}", kind.command()));
            }
            outputs.push(csv_bytes(d.path()));
        }
        files += outputs[0].len();
        if outputs[0].is_empty() || outputs[0] != outputs[1] {
            differing.push(kind.command().to_string());
        }
    }
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{files} CSV files byte-identical across two runs of all six subcommands")
        } else {
            format!("differences: {}", differing.join(", "))
        },
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("trivial exact recovery", || {
            timed(Duration::from_secs(1), trivial_recovery)
        }),
        ("noiseless IHT recovery", || {
            timed(NOISELESS_RUNTIME, noiseless_recovery)
        }),
        ("identifiability degrades with alpha", || {
            timed(ALPHA_RUNTIME, alpha_ordering)
        }),
        ("outlier trade-off", || timed(OUTLIER_RUNTIME, outlier_tradeoff)),
        ("recovery bound on small instances", || {
            timed(BOUND_RUNTIME, recovery_bound)
        }),
        ("restricted Lipschitz constant of P_alpha", || {
            timed(BETA_RUNTIME, approximate_projection_beta)
        }),
        ("NIPR gradient matches finite differences", || {
            timed(GRAD_RUNTIME, nipr_gradient)
        }),
        ("NIPR stability direction", || timed(NIPR_RUNTIME, nipr_stability)),
        ("product projection and joint recovery", || {
            timed(JOINT_RUNTIME, product_projection)
        }),
        ("step-size trade-off", || timed(STEP_RUNTIME, step_size_tradeoff)),
        ("CLI determinism", determinism),
    ];
    let mut unexpected = Vec::new();
    let mut passed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        let o = run();
        println!(
            "AC{id:<2} {} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        passed += o.pass as usize;
        if o.pass == EXPECTED_FAIL.contains(&id) {
            unexpected.push(id);
        }
    }
    println!(
        "{passed}/{} criteria pass; expected failures {EXPECTED_FAIL:?}",
        criteria.len()
    );
    if !unexpected.is_empty() {
        println!("unexpected outcome for criteria {unexpected:?}");
        std::process::exit(1);
    }
}
