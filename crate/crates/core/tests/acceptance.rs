//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits nonzero on
//! any failure that is not a documented known failure.
//!
//! Run a subset with `cargo test --test acceptance -- 5 6`.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use feddecorr::cli::{self, parse_config, ExperimentConfig};
use feddecorr::data::{dirichlet_partition, Concentration, Dataset, GaussianMixture, Partition};
use feddecorr::decorr::{correlation_matrix, decov_loss, feddecorr_loss, prop1_residual, DEFAULT_EPS};
use feddecorr::fed::{aggregate_fedavg, init_model, run_federation, server_momentum_step, FedConfig};
use feddecorr::linalg::{Matrix, Rng, Stream};
use feddecorr::nn::{backward, grad_check, sgd_step, Activation, Batch, LossSpec, Model, OptState, Prox, Reduction};
use feddecorr::theory::{
    self, balanced_init, compute_g, residual_times_inputs, within_class_cross_covariance, HeadInit, LinearStack,
    TheoryTrace,
};

// Pinned tolerances.
const PROP1_TOL: f64 = 1e-9;
const PROP1_CASES: usize = 1000;
const GRAD_TOL: f64 = 1e-5;
const GRAD_CASES: usize = 100;
const GRAD_STEP: f64 = 1e-5;
const AFFINE_TOL: f64 = 1e-9;
const AFFINE_CASES: usize = 200;
const DECOV_MIN_CHANGE: f64 = 1e-2;
const EQ30_TOL: f64 = 1e-10;
const EQ30_CASES: usize = 100;
const THM1_MEDIAN_TOL: f64 = 0.05;
const THM1_LRS: [f64; 3] = [4e-4, 2e-4, 1e-4];
const HALVING_RATIO: f64 = 0.5;
/// Drifts at or below this are round-off and count as conserved.
const DRIFT_FLOOR: f64 = 1e-12;
const ALIGN_LOSS: f64 = 0.1;
const ALIGN_TOP: usize = 5;
const ALIGN_DIAG_MIN: f64 = 0.9;
const ALIGN_OFF_MAX: f64 = 0.3;
const PARITY_POINTS: f64 = 5.0;

const COLLAPSE: &str = include_str!("../configs/collapse.toml");
const THEOREM1: &str = include_str!("../configs/theorem1.toml");
const SMOKE: &str = include_str!("../configs/smoke.toml");

/// Criteria expected to fail; the analysis is in the README.
const DOCUMENTED: [usize; 1] = [4];

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

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed <= Duration::from_secs(limit_s)
}

// ---------------------------------------------------------------------------
// 1

fn criterion_1() -> Outcome {
    let mut rng = Rng::for_purpose(1, Stream::Test, 0, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..PROP1_CASES {
        let d = 2 + rng.below(63);
        let n = 3 + rng.below(254);
        let scales: Vec<f64> = (0..d).map(|_| (rng.uniform_range(-3.0, 3.0)).exp()).collect();
        let shifts: Vec<f64> = (0..d).map(|_| rng.uniform_range(-5.0, 5.0)).collect();
        let z = Matrix::from_fn(n, d, |_, j| scales[j] * rng.gaussian() + shifts[j]);
        let k = correlation_matrix(&z, DEFAULT_EPS).unwrap();
        worst = worst.max(prop1_residual(&k).unwrap());
    }
    outcome(
        worst < PROP1_TOL,
        format!("max residual {worst:.2e} over {PROP1_CASES} matrices (tol {PROP1_TOL:e})"),
    )
}

// ---------------------------------------------------------------------------
// 2

fn criterion_2() -> Outcome {
    let mut rng = Rng::for_purpose(2, Stream::Test, 0, 0);
    let mut worst: f64 = 0.0;
    let mut guarded = 0;
    for case in 0..GRAD_CASES {
        let d_in = 2 + rng.below(5);
        let classes = 2 + rng.below(3);
        let depth = 1 + rng.below(2);
        let mut dims = vec![d_in];
        for _ in 0..depth {
            dims.push(2 + rng.below(5));
        }
        dims.push(classes);
        let act = if case % 4 == 3 { Activation::None } else { Activation::Relu };
        let mut model = Model::mlp(&dims, act, true, &mut rng).unwrap();
        let n = 4 + rng.below(9);
        if act == Activation::Relu && case % 2 == 0 {
            // Kill one representation unit: constant zero output, guarded in the z-score.
            let last = model.layers.len() - 2;
            let w = &mut model.layers[last].weight;
            let r = rng.below(w.rows());
            w.row_mut(r).fill(0.0);
            model.layers[last].bias.as_mut().unwrap()[r] = -1.0;
            guarded += 1;
        }
        let x = rng.gaussian_matrix(d_in, n);
        let y: Vec<usize> = (0..n).map(|_| rng.below(classes)).collect();
        let batch = Batch::new(x, y, classes).unwrap();
        let anchor = model.clone();
        let spec = LossSpec {
            beta: 0.1,
            prox: (case % 3 == 1).then_some(Prox {
                mu: 1e-3,
                anchor: &anchor,
            }),
            reduction: Reduction::Mean,
            eps: DEFAULT_EPS,
        };
        worst = worst.max(grad_check(&model, &batch, &spec, GRAD_STEP).unwrap());
    }
    outcome(
        worst < GRAD_TOL,
        format!("max relative error {worst:.2e} over {GRAD_CASES} configs, {guarded} with a guarded dimension (tol {GRAD_TOL:e})"),
    )
}

// ---------------------------------------------------------------------------
// 3

fn criterion_3() -> Outcome {
    let mut rng = Rng::for_purpose(3, Stream::Test, 0, 0);
    let mut worst: f64 = 0.0;
    let mut decov_min = f64::INFINITY;
    for _ in 0..AFFINE_CASES {
        let n = 3 + rng.below(60);
        let d = 2 + rng.below(16);
        let z = rng.gaussian_matrix(n, d);
        let a: Vec<f64> = (0..d)
            .map(|_| {
                let s = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
                s * rng.uniform_range(-2.0, 2.0).exp()
            })
            .collect();
        let b: Vec<f64> = (0..d).map(|_| rng.uniform_range(-10.0, 10.0)).collect();
        let za = Matrix::from_fn(n, d, |i, j| a[j] * z[(i, j)] + b[j]);
        let l0 = feddecorr_loss(&z, DEFAULT_EPS).unwrap();
        let l1 = feddecorr_loss(&za, DEFAULT_EPS).unwrap();
        worst = worst.max((l0 - l1).abs());
        let d0 = decov_loss(&z).unwrap();
        let d1 = decov_loss(&za).unwrap();
        if d0 > 0.0 {
            decov_min = decov_min.min((d0 - d1).abs() / d0);
        }
    }
    // A uniform scale change is the plainest contrast.
    let z = rng.gaussian_matrix(32, 6);
    let decov_scaled = (decov_loss(&z.scale(3.0)).unwrap() / decov_loss(&z).unwrap() - 81.0).abs() < 1e-9;
    outcome(
        worst < AFFINE_TOL && decov_min > DECOV_MIN_CHANGE && decov_scaled,
        format!(
            "feddecorr max change {worst:.2e} (tol {AFFINE_TOL:e}); decov min relative change {decov_min:.3} (> {DECOV_MIN_CHANGE}), scales by 3^4 under z -> 3z: {decov_scaled}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 4

fn criterion_4() -> Outcome {
    let mut rng = Rng::for_purpose(4, Stream::Test, 0, 0);
    let (mut worst, mut decomposition, mut constant_regime): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for case in 0..EQ30_CASES {
        let d = 2 + rng.below(7);
        let c = 2 + rng.below(4);
        let n = c + rng.below(40);
        let stack = LinearStack::new(vec![rng.gaussian_matrix(d, d), rng.gaussian_matrix(d, d), rng.gaussian_matrix(c, d)]).unwrap();
        let y: Vec<usize> = (0..n).map(|i| if i < c { i } else { rng.below(c) }).collect();
        let x = rng.gaussian_matrix(d, n);
        let b = Batch::new(x, y.clone(), c).unwrap();
        let lhs = residual_times_inputs(&stack, &b).unwrap();
        let ng = compute_g(&stack, &b).unwrap().scale(n as f64);
        worst = worst.max(lhs.max_abs_diff(&ng));
        let cov = within_class_cross_covariance(&stack, &b).unwrap();
        decomposition = decomposition.max(lhs.max_abs_diff(&ng.sub(&cov).unwrap()));
        if case % 4 == 0 {
            // Class-constant inputs: the one regime where the identity is exact.
            let means = rng.gaussian_matrix(d, c);
            let xc = Matrix::from_fn(d, n, |r, j| means[(r, y[j])]);
            let bc = Batch::new(xc, y, c).unwrap();
            let l = residual_times_inputs(&stack, &bc).unwrap();
            let r = compute_g(&stack, &bc).unwrap().scale(n as f64);
            constant_regime = constant_regime.max(l.max_abs_diff(&r));
        }
    }
    outcome(
        worst < EQ30_TOL,
        format!(
            "max |(Y-Γ)Xᵀ - N·G| {worst:.3e} on random batches (tol {EQ30_TOL:e}); exact with the within-class term: {decomposition:.1e}; class-constant inputs: {constant_regime:.1e}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 5 and 6

fn theory_cfg(lr: f64) -> ExperimentConfig {
    let mut cfg = parse_config(THEOREM1).unwrap();
    cfg.theory.flow.lr = lr;
    cfg
}

fn criterion_5(traces: &[(f64, TheoryTrace)], elapsed: Duration) -> Outcome {
    let median = |lr: f64| {
        traces
            .iter()
            .find(|(l, _)| *l == lr)
            .and_then(|(_, t)| t.median_residual())
            .unwrap_or(f64::NAN)
    };
    let (m1, m2) = (median(1e-4), median(2e-4));
    let count = traces.iter().find(|(l, _)| *l == 1e-4).map_or(0, |(_, t)| t.valid_residuals().len());
    outcome(
        m1 < THM1_MEDIAN_TOL && m1 < m2 && within(elapsed, 120),
        format!(
            "median residual {m1:.3e} at lr 1e-4 over {count} records (tol {THM1_MEDIAN_TOL}); {m2:.3e} at lr 2e-4; {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn halves(big: f64, small: f64) -> bool {
    (big <= DRIFT_FLOOR && small <= DRIFT_FLOOR) || small <= HALVING_RATIO * big
}

fn criterion_6(traces: &[(f64, TheoryTrace)], elapsed: Duration) -> Outcome {
    let gaps: Vec<f64> = traces.iter().map(|(_, t)| t.max_gap()).collect();
    let drifts: Vec<Vec<f64>> = traces.iter().map(|(_, t)| t.m_drift()).collect();
    let mut ok = true;
    for w in 0..traces.len() - 1 {
        ok &= halves(gaps[w], gaps[w + 1]);
        for (big, small) in drifts[w].iter().zip(&drifts[w + 1]) {
            ok &= halves(*big, *small);
        }
    }
    let max_m: Vec<String> = drifts
        .iter()
        .map(|d| format!("{:.2e}", d.iter().cloned().fold(0.0, f64::max)))
        .collect();
    let gap_s: Vec<String> = gaps.iter().map(|g| format!("{g:.2e}")).collect();
    outcome(
        ok && within(elapsed, 300),
        format!(
            "lr {THM1_LRS:?}: balancedness gap [{}], max M_k drift [{}]; every ratio <= {HALVING_RATIO} (floor {DRIFT_FLOOR:e}); {:.1}s",
            gap_s.join(", "),
            max_m.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 7

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let (d, c) = (16, 10);
    let data = GaussianMixture::new(c, d, 5.0, &mut Rng::for_purpose(7, Stream::Data, 0, 0))
        .unwrap()
        .sample(50, &mut Rng::for_purpose(7, Stream::Data, 1, 0), "separable")
        .unwrap();
    let batch = data.batch().unwrap();
    let mut stack = balanced_init(
        &[d, d, d, d, c],
        0.5,
        HeadInit::Orthogonal(0.1),
        &mut Rng::for_purpose(7, Stream::Theory, 0, 0),
    )
    .unwrap();
    let (steps, loss) = theory::train_until(&mut stack, &batch, 0.05, Reduction::Mean, ALIGN_LOSS, 200_000).unwrap();
    let a = theory::alignment_matrix(&stack).unwrap();
    let diag: f64 = (0..ALIGN_TOP).map(|k| a[(k, k)]).sum::<f64>() / ALIGN_TOP as f64;
    let mut off: f64 = 0.0;
    for r in 0..ALIGN_TOP {
        for k in 0..a.cols() {
            if k != r {
                off = off.max(a[(r, k)]);
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        loss < ALIGN_LOSS && diag > ALIGN_DIAG_MIN && off < ALIGN_OFF_MAX && within(elapsed, 60),
        format!(
            "depth {} reached loss {loss:.4} in {steps} steps; top-{ALIGN_TOP} mean diagonal {diag:.4} (> {ALIGN_DIAG_MIN}), max off-diagonal {off:.4} (< {ALIGN_OFF_MAX}); {:.1}s",
            stack.depth(),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 8 and 9

fn monotone(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] <= w[1])
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" <= ")
}

fn criterion_8(rows: &[cli::SweepRow], elapsed: Duration) -> Outcome {
    let g: Vec<f64> = rows.iter().map(|r| r.erank_global).collect();
    let l: Vec<f64> = rows.iter().map(|r| r.erank_local).collect();
    let acc: Vec<String> = rows.iter().map(|r| format!("{:.3}", r.accuracy)).collect();
    outcome(
        monotone(&g) && monotone(&l) && within(elapsed, 600),
        format!(
            "alpha 0.05,0.1,0.5,inf over {} seeds: global erank {}; local erank {}; accuracy [{}]; {:.1}s",
            rows.first().map_or(0, |r| r.seeds),
            fmt_list(&g),
            fmt_list(&l),
            acc.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_9(base: &[cli::SweepRow], decorr: &[cli::SweepRow], elapsed: Duration) -> Outcome {
    let find = |rows: &[cli::SweepRow], a: Concentration| rows.iter().find(|r| r.alpha == a).cloned();
    let het = Concentration::Finite(0.05);
    let (Some(b0), Some(b1), Some(i0), Some(i1)) = (
        find(base, het),
        find(decorr, het),
        find(base, Concentration::Infinite),
        find(decorr, Concentration::Infinite),
    ) else {
        return outcome(false, "missing sweep rows");
    };
    let gap = 100.0 * (i1.accuracy - i0.accuracy).abs();
    outcome(
        b1.erank_global > b0.erank_global && b1.accuracy >= b0.accuracy && gap < PARITY_POINTS && within(elapsed, 900),
        format!(
            "alpha 0.05: erank {:.3} -> {:.3}, accuracy {:.4} -> {:.4}; alpha inf: accuracy {:.4} vs {:.4} (gap {gap:.2} points < {PARITY_POINTS}); {:.1}s",
            b0.erank_global,
            b1.erank_global,
            b0.accuracy,
            b1.accuracy,
            i0.accuracy,
            i1.accuracy,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 10

fn centralized_sgd(cfg: &FedConfig, init: Model, data: &Dataset) -> Model {
    let spec = LossSpec {
        beta: cfg.beta,
        prox: None,
        reduction: Reduction::Mean,
        eps: cfg.eps,
    };
    let mut w = init;
    for round in 0..cfg.rounds {
        let mut rng = Rng::for_purpose(cfg.seed, Stream::Shuffle, round as u64, 0);
        let mut opt = OptState::new(&w, cfg.lr, cfg.momentum, cfg.weight_decay);
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _ in 0..cfg.local_epochs {
            rng.shuffle(&mut order);
            for chunk in order.chunks(cfg.batch_size) {
                let b = data.batch_of(chunk).unwrap();
                let (g, _) = backward(&w, &b, &spec).unwrap();
                sgd_step(&mut w, &g, &mut opt).unwrap();
            }
        }
    }
    w
}

fn criterion_10() -> Outcome {
    let mut rng = Rng::for_purpose(10, Stream::Test, 0, 0);
    let mut checks = Vec::new();

    let dims = [5, 7, 3];
    let m = Model::mlp(&dims, Activation::Relu, true, &mut rng).unwrap();
    let same = aggregate_fedavg(&[&m, &m, &m], &[3.0, 1.0, 9.0]).unwrap();
    let others: Vec<Model> = (0..3).map(|_| Model::mlp(&dims, Activation::Relu, true, &mut rng).unwrap()).collect();
    let refs: Vec<&Model> = others.iter().collect();
    let one_hot = aggregate_fedavg(&refs, &[0.0, 4.0, 0.0]).unwrap();
    checks.push(("identity", same.to_bytes() == m.to_bytes() && one_hot.to_bytes() == others[1].to_bytes()));

    let w = [1.0, 2.0, 5.0];
    let agg = aggregate_fedavg(&refs, &w).unwrap();
    let mut convex = true;
    let cols: Vec<Vec<f64>> = others.iter().map(|o| o.params().copied().collect()).collect();
    for (i, &v) in agg.params().enumerate() {
        let direct = (w[0] * cols[0][i] + w[1] * cols[1][i] + w[2] * cols[2][i]) / 8.0;
        let lo = cols.iter().map(|c| c[i]).fold(f64::INFINITY, f64::min);
        let hi = cols.iter().map(|c| c[i]).fold(f64::NEG_INFINITY, f64::max);
        convex &= (v - direct).abs() <= 1e-12 * direct.abs().max(1.0) && v >= lo && v <= hi;
    }
    checks.push(("convex", convex));

    let (prev, buf) = (others[0].clone(), others[2].clone());
    let (next, _) = server_momentum_step(&prev, &others[1], 0.0, &buf).unwrap();
    checks.push(("rho0", next.to_bytes() == others[1].to_bytes()));

    let data = GaussianMixture::with_subclusters(3, 2, 6, 3.0, &mut rng)
        .unwrap()
        .sample(30, &mut rng, "k1")
        .unwrap();
    let part = dirichlet_partition(&data.labels, 3, 1, Concentration::Finite(0.3), 4, 2).unwrap();
    let cfg = FedConfig {
        rounds: 3,
        local_epochs: 2,
        batch_size: 16,
        seed: 11,
        ..FedConfig::default()
    };
    let init = init_model(&[6, 8, 8, 3], Activation::Relu, 11).unwrap();
    let fedrun = run_federation(&cfg, init.clone(), &data, &part, &data).unwrap();
    let central = centralized_sgd(&cfg, init, &data);
    checks.push(("k1_bitwise", fedrun.global.to_bytes() == central.to_bytes()));

    let mut parts_ok = true;
    for (i, alpha) in [Concentration::Finite(0.05), Concentration::Finite(1.0), Concentration::Infinite].into_iter().enumerate() {
        let p = dirichlet_partition(&data.labels, 3, 5, alpha, i as u64, 2).unwrap();
        let q = dirichlet_partition(&data.labels, 3, 5, alpha, i as u64, 2).unwrap();
        let back = Partition::from_json(&p.to_json(), &data.labels, 3).unwrap();
        parts_ok &= p.is_exact_cover(data.len()) && p.assignment == q.assignment && back.assignment == p.assignment;
    }
    checks.push(("partition", parts_ok));

    let pass = checks.iter().all(|c| c.1);
    let detail: Vec<String> = checks.iter().map(|(n, ok)| format!("{n}={}", if *ok { "exact" } else { "MISMATCH" })).collect();
    outcome(pass, detail.join(", "))
}

// ---------------------------------------------------------------------------
// 11

fn data_files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "manifest.json") {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn rerun_identical(command: &str, config: &str) -> (bool, usize) {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("config.toml");
    fs::write(&cfg_path, config).unwrap();
    let (a, b) = (tmp.path().join("first"), tmp.path().join("second"));
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let code1 = cli::run_from(["feddecorr", command, "--config", &s(&cfg_path), "--out", &s(&a)]);
    let code2 = cli::run_from(["feddecorr", command, "--from-manifest", &s(&a.join("manifest.json")), "--out", &s(&b)]);
    let (fa, fb) = (data_files(&a), data_files(&b));
    (code1 == 0 && code2 == 0 && !fa.is_empty() && fa == fb, fa.len())
}

fn criterion_11() -> Outcome {
    let (train_ok, nt) = rerun_identical("train", SMOKE);
    let mut short_theory = parse_config(THEOREM1).unwrap();
    short_theory.theory.flow.steps = 500;
    let (theory_ok, nh) = rerun_identical("theory", &short_theory.to_toml());
    outcome(
        train_ok && theory_ok,
        format!("train: {nt} data files identical={train_ok}; theory: {nh} data files identical={theory_ok}"),
    )
}

// ---------------------------------------------------------------------------

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let on = |k: usize| wanted.is_empty() || wanted.contains(&k);
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |k: usize, name: &'static str, o: Outcome| {
        let tag = match (o.pass, DOCUMENTED.contains(&k)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (documented)",
            (false, false) => "FAIL",
        };
        println!("{tag} [{k}] {name}: {}", o.detail);
        results.push((k, name, o));
    };

    if on(1) {
        record(1, "correlation-spectrum identity", criterion_1());
    }
    if on(2) {
        record(2, "decorrelation gradient", criterion_2());
    }
    if on(3) {
        record(3, "scale invariance", criterion_3());
    }
    if on(4) {
        record(4, "residual-times-inputs identity", criterion_4());
    }
    if on(5) || on(6) {
        let start = Instant::now();
        let mut traces = Vec::new();
        let mut t5 = Duration::ZERO;
        for lr in THM1_LRS {
            let t = Instant::now();
            traces.push((lr, cli::run_theory(&theory_cfg(lr)).unwrap()));
            if lr == 1e-4 || lr == 2e-4 {
                t5 += t.elapsed();
            }
        }
        let all = start.elapsed();
        if on(5) {
            record(5, "singular-value dynamics", criterion_5(&traces, t5));
        }
        if on(6) {
            record(6, "conservation laws", criterion_6(&traces, all));
        }
    }
    if on(7) {
        record(7, "alignment", criterion_7());
    }
    if on(8) || on(9) {
        let mut cfg = parse_config(COLLAPSE).unwrap();
        cfg.fed.spectrum_every = 0;
        cfg.sweep.betas = vec![0.0];
        let start = Instant::now();
        let base = cli::sweep(&cfg, None).unwrap();
        let t8 = start.elapsed();
        if on(8) {
            record(8, "dimensional collapse", criterion_8(&base, t8));
        }
        if on(9) {
            cfg.sweep.betas = vec![0.1];
            cfg.sweep.alphas = vec![Concentration::Finite(0.05), Concentration::Infinite];
            let start = Instant::now();
            let decorr = cli::sweep(&cfg, None).unwrap();
            record(9, "decorrelation mitigation", criterion_9(&base, &decorr, start.elapsed()));
        }
    }
    if on(10) {
        record(10, "protocol exactness", criterion_10());
    }
    if on(11) {
        record(11, "reproducibility", criterion_11());
    }

    let unexpected: Vec<usize> = results
        .iter()
        .filter(|(k, _, o)| !o.pass && !DOCUMENTED.contains(k))
        .map(|(k, _, _)| *k)
        .collect();
    let passed = results.iter().filter(|r| r.2.pass).count();
    println!(
        "{passed}/{} criteria passed; documented failures: {:?}; unexpected failures: {:?}",
        results.len(),
        results.iter().filter(|(k, _, o)| !o.pass && DOCUMENTED.contains(k)).map(|r| r.0).collect::<Vec<_>>(),
        unexpected
    );
    if !unexpected.is_empty() {
        std::process::exit(1);
    }
}
