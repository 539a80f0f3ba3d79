//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines are always shown. Pass
//! criterion numbers as arguments (or set `FRAD_ACCEPTANCE`, e.g. `1,4`) to
//! run a subset.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use frad::data::{LabelId, N_CLASSES};
use frad::datagen::{self, GeneratorConfig};
use frad::eval;
use frad::features;
use frad::hpo::{self, DimKind, Dimension, KernelConfig, Params, SearchSpace};
use frad::matrix::Matrix;
use frad::mlp::{self, MlpTrainConfig};
use frad::model::ModelKind;
use frad::pipeline::{self, HpoConfig, RunConfig};
use frad::rng;
use frad::tree::{self, TreeParams};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

/// Tolerances and limits, as stated in the acceptance criteria.
mod tol {
    pub const METRICS_ABS: f64 = 1e-12;
    pub const METRICS_LIMIT_S: u64 = 5;
    pub const GRAD_REL: f64 = 1e-5;
    pub const GRAD_STEP: f64 = 1e-5;
    pub const GRAD_LIMIT_S: u64 = 10;
    pub const TREE_LIMIT_S: u64 = 10;
    pub const GP_INTERP_ABS: f64 = 1e-4;
    pub const EI_PHI0: f64 = 0.3989422804014327;
    pub const EI_ABS: f64 = 1e-12;
    pub const BO_X_ABS: f64 = 0.05;
    pub const GP_LIMIT_S: u64 = 30;
    pub const SEPARABLE_ACC: f64 = 0.99;
    pub const SEPARABLE_LIMIT_S: u64 = 120;
    pub const SCALE_ACC_LOW: f64 = 0.75;
    pub const SCALE_ACC_HIGH: f64 = 0.98;
    pub const SCALE_F1_GAP: f64 = 0.03;
    pub const SCALE_LIMIT_S: u64 = 15 * 60;
    pub const STD_ABS: f64 = 1e-10;
    pub const CORR_SYM_ABS: f64 = 1e-12;
    pub const STD_LIMIT_S: u64 = 5;
}

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

fn within_time(o: Outcome, elapsed: Duration, limit_s: u64) -> Outcome {
    let fast = elapsed <= Duration::from_secs(limit_s);
    outcome(
        o.pass && fast,
        format!("{} [{:.1}s / limit {}s]", o.detail, elapsed.as_secs_f64(), limit_s),
    )
}

fn label(i: usize) -> LabelId {
    LabelId::new(i as u64).unwrap()
}

// 1. Metrics against brute-force counting.

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = rng::seeded(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let t: Vec<usize> = (0..200).map(|_| rng.random_range(0..3)).collect();
        let p: Vec<usize> = (0..200).map(|_| rng.random_range(0..3)).collect();
        let cm = eval::confusion_matrix(
            &t.iter().map(|&i| label(i)).collect::<Vec<_>>(),
            &p.iter().map(|&i| label(i)).collect::<Vec<_>>(),
        )
        .unwrap();
        let m = eval::compute_metrics(&cm, "x").unwrap();

        let hits = t.iter().zip(&p).filter(|(a, b)| a == b).count();
        let mut got = vec![m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1];
        let mut want = vec![hits as f64 / 200.0];
        let (mut ps, mut rs, mut fs) = (0.0, 0.0, 0.0);
        for k in 0..3 {
            let tp = t.iter().zip(&p).filter(|&(&a, &b)| a == k && b == k).count() as f64;
            let fp = t.iter().zip(&p).filter(|&(&a, &b)| a != k && b == k).count() as f64;
            let fn_ = t.iter().zip(&p).filter(|&(&a, &b)| a == k && b != k).count() as f64;
            let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let rec = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
            let f1 = if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
            got.extend([m.per_class_precision[k], m.per_class_recall[k], m.per_class_f1[k]]);
            want.extend([prec, rec, f1]);
            ps += prec;
            rs += rec;
            fs += f1;
        }
        want.splice(1..1, [ps / 3.0, rs / 3.0, fs / 3.0]);
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
    }
    within_time(
        outcome(worst <= tol::METRICS_ABS, format!("max deviation {worst:e} over 1000 pairs")),
        start.elapsed(),
        tol::METRICS_LIMIT_S,
    )
}

// 2. MLP gradient check.

fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    let den = na.max(nn);
    if den == 0.0 {
        0.0
    } else {
        diff / den
    }
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let cfg = MlpTrainConfig {
        n_hidden: 5,
        ..MlpTrainConfig::default()
    };
    let mut rng = rng::seeded(2);
    let mut worst = 0.0f64;
    for b in 0..20u64 {
        let mut m = mlp::init_mlp(4, &cfg, b).unwrap();
        for v in m.b1.iter_mut().chain(m.b2.iter_mut()) {
            *v = rng.random_range(-0.5..0.5);
        }
        let n = 8;
        let x: Vec<f64> = (0..n * 4).map(|_| StandardNormal.sample(&mut rng)).collect();
        let x = Matrix::new(n, 4, x).unwrap();
        let y: Vec<LabelId> = (0..n).map(|_| label(rng.random_range(0..3))).collect();
        let (_, g) = mlp::loss_and_gradients(&m, &x, &y).unwrap();

        let tensors: [(&[f64], fn(&mut mlp::MlpModel) -> &mut Vec<f64>); 4] = [
            (&g.w1, |m| &mut m.w1),
            (&g.b1, |m| &mut m.b1),
            (&g.w2, |m| &mut m.w2),
            (&g.b2, |m| &mut m.b2),
        ];
        for (analytic, select) in tensors {
            let numeric: Vec<f64> = (0..analytic.len())
                .map(|i| {
                    let mut plus = m.clone();
                    select(&mut plus)[i] += tol::GRAD_STEP;
                    let mut minus = m.clone();
                    select(&mut minus)[i] -= tol::GRAD_STEP;
                    let lp = mlp::loss_and_gradients(&plus, &x, &y).unwrap().0;
                    let lm = mlp::loss_and_gradients(&minus, &x, &y).unwrap().0;
                    (lp - lm) / (2.0 * tol::GRAD_STEP)
                })
                .collect();
            worst = worst.max(rel_error(analytic, &numeric));
        }
    }
    within_time(
        outcome(worst <= tol::GRAD_REL, format!("max per-tensor relative error {worst:e} over 20 batches")),
        start.elapsed(),
        tol::GRAD_LIMIT_S,
    )
}

// 3. Root split against exhaustive enumeration.

/// Best (feature, threshold) by weighted gini, scanning features then
/// thresholds in ascending order and keeping the first strict improvement.
fn exhaustive_root(x: &[[f64; 2]], y: &[usize]) -> Option<(usize, f64)> {
    let n = y.len() as i128;
    let mut counts = [0i128; 3];
    for &l in y {
        counts[l] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return None;
    }
    // Maximize S = Σ cL²/nL + Σ cR²/nR, compared exactly as fractions.
    let mut best: Option<(i128, i128, usize, f64)> = None;
    for f in 0..2 {
        let mut vals: Vec<f64> = x.iter().map(|r| r[f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let mut t = 0.5 * (w[0] + w[1]);
            if t <= w[0] {
                t = w[1];
            }
            let mut cl = [0i128; 3];
            for (r, &l) in x.iter().zip(y) {
                if r[f] < t {
                    cl[l] += 1;
                }
            }
            let nl: i128 = cl.iter().sum();
            let nr = n - nl;
            let a: i128 = cl.iter().map(|c| c * c).sum();
            let b: i128 = (0..3).map(|k| (counts[k] - cl[k]).pow(2)).sum();
            let num = a * nr + b * nl;
            let den = nl * nr;
            let better = match &best {
                None => true,
                Some((bn, bd, _, _)) => num * bd > bn * den,
            };
            if better {
                best = Some((num, den, f, t));
            }
        }
    }
    best.map(|(_, _, f, t)| (f, t))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = rng::seeded(3);
    let params = TreeParams {
        n_feature_candidates: usize::MAX,
        ..TreeParams::default()
    };
    let mut mismatches = 0;
    for d in 0..50 {
        let n = rng.random_range(2..=16);
        let x: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                let coarse = d % 2 == 0;
                let v = |rng: &mut rng::Rng| {
                    if coarse {
                        f64::from(rng.random_range(0..5u8))
                    } else {
                        rng.random_range(-1.0..1.0)
                    }
                };
                [v(&mut rng), v(&mut rng)]
            })
            .collect();
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let m = Matrix::from_rows(&x.iter().map(|r| r.to_vec()).collect::<Vec<_>>(), 2).unwrap();
        let labels: Vec<LabelId> = y.iter().map(|&l| label(l)).collect();
        let t = tree::fit_classification_tree(&m, &labels, &params, &mut rng::seeded(d as u64)).unwrap();
        if t.root_split() != exhaustive_root(&x, &y) {
            mismatches += 1;
        }
    }
    within_time(
        outcome(mismatches == 0, format!("{mismatches}/50 root splits differ from the oracle")),
        start.elapsed(),
        tol::TREE_LIMIT_S,
    )
}

// 4. GP interpolation, EI closed form, optimizer accuracy.

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut rng = rng::seeded(4);
    let mut interp = 0.0f64;
    for _ in 0..10 {
        let n = rng.random_range(3..=10);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.0)).collect();
        let gp = hpo::gp_fit(&pts, &ys, &KernelConfig::default()).unwrap();
        for (p, y) in pts.iter().zip(&ys) {
            interp = interp.max((hpo::gp_posterior(&gp, p).unwrap().0 - y).abs());
        }
    }
    let negative = (0..10_000)
        .filter(|_| {
            let mean = rng.random_range(-3.0..3.0);
            let std = rng.random_range(0.0..2.0);
            let best = rng.random_range(-3.0..3.0);
            hpo::expected_improvement(mean, std, best) < 0.0
        })
        .count();
    let phi0 = hpo::expected_improvement(0.0, 1.0, 0.0);

    let space = SearchSpace::new(vec![Dimension::new("x", DimKind::Real, 0.0, 1.0).unwrap()]).unwrap();
    let f = |x: f64| -(x - 0.3).powi(2);
    let grid_best = (0..=1000)
        .map(|i| i as f64 / 1000.0)
        .fold((0.0, f64::NEG_INFINITY), |acc, x| if f(x) > acc.1 { (x, f(x)) } else { acc })
        .0;
    let mut hits = 0;
    for seed in 0..10 {
        let (best, _) = hpo::bayes_optimize(|_, p: &Params| Ok(f(p["x"].as_f64())), &space, 30, 8, seed).unwrap();
        if (best.params["x"].as_f64() - grid_best).abs() <= tol::BO_X_ABS {
            hits += 1;
        }
    }
    let pass = interp <= tol::GP_INTERP_ABS
        && negative == 0
        && (phi0 - tol::EI_PHI0).abs() <= tol::EI_ABS
        && hits == 10;
    within_time(
        outcome(
            pass,
            format!(
                "interpolation error {interp:.2e}, negative EI {negative}/10000, EI(0,1,0)={phi0:.16}, optimum found {hits}/10"
            ),
        ),
        start.elapsed(),
        tol::GP_LIMIT_S,
    )
}

// 5. Noise-free data is separable for every model.

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let gen = GeneratorConfig {
        n_total: 3000,
        noise_sigma: 0.0,
        ..GeneratorConfig::default()
    };
    let d = datagen::generate_dataset(&gen).unwrap();
    let rule_hits = d
        .features()
        .iter_rows()
        .zip(d.labels())
        .filter(|(r, l)| datagen::hand_rule(r) == **l)
        .count();
    let rule_acc = rule_hits as f64 / d.n_rows() as f64;

    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        generator: gen,
        hpo: HpoConfig {
            enabled: false,
            ..HpoConfig::default()
        },
        out_dir: Some(dir.path().to_path_buf()),
        ..RunConfig::default()
    }
    .finalize()
    .unwrap();
    let report = pipeline::run_all(&cfg).unwrap();
    let accs: Vec<String> = report
        .models
        .iter()
        .map(|m| format!("{} {:.4}", m.name, m.metrics.accuracy))
        .collect();
    let pass = rule_acc == 1.0
        && report.models.len() == 4
        && report.models.iter().all(|m| m.metrics.accuracy >= tol::SEPARABLE_ACC);
    within_time(
        outcome(pass, format!("hand rule {rule_acc:.4}; {}", accs.join(", "))),
        start.elapsed(),
        tol::SEPARABLE_LIMIT_S,
    )
}

// 6 and 7. Full-scale runs through the binary.

fn run_all_binary(out: &Path, threads: usize) -> Result<Duration, String> {
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_frad"))
        .args(["run-all", "--n", "9798", "--seed", "42", "--hpo-budget", "25", "--threads"])
        .arg(threads.to_string())
        .arg("--out-dir")
        .arg(out)
        .env("RUST_LOG", "warn")
        .status()
        .map_err(|e| e.to_string())?;
    if !status.success() {
        return Err(format!("run-all exited with {status}"));
    }
    Ok(start.elapsed())
}

fn criterion_6(out: &Path, elapsed: Duration) -> Outcome {
    let text = match std::fs::read_to_string(out.join(eval::REPORT_JSON)) {
        Ok(t) => t,
        Err(e) => return outcome(false, format!("no report: {e}")),
    };
    let report: eval::ComparisonReport = serde_json::from_str(&text).unwrap();

    // Expected test counts from the floor rule applied to the generated labels.
    let d = datagen::generate_dataset(&GeneratorConfig {
        n_total: 9798,
        seed: 42,
        ..GeneratorConfig::default()
    })
    .unwrap();
    let expected: Vec<u64> = d
        .class_counts()
        .iter()
        .map(|&c| (c - (0.8 * c as f64).floor() as usize) as u64)
        .collect();

    let mut problems = Vec::new();
    let mut summary = Vec::new();
    for m in &report.models {
        let acc = m.metrics.accuracy;
        let f1 = m.metrics.macro_f1;
        summary.push(format!("{} acc {acc:.4} f1 {f1:.4}", m.name));
        if !(tol::SCALE_ACC_LOW..=tol::SCALE_ACC_HIGH).contains(&acc) {
            problems.push(format!("(a) {} accuracy {acc:.4}", m.name));
        }
        if (f1 - acc).abs() > tol::SCALE_F1_GAP {
            problems.push(format!("(b) {} |f1-acc| {:.4}", m.name, (f1 - acc).abs()));
        }
        let sums: Vec<u64> = (0..N_CLASSES).map(|k| m.confusion.row_sum(k)).collect();
        if sums != expected {
            problems.push(format!("(c) {} row sums {sums:?} != {expected:?}", m.name));
        }
    }
    if report.models.len() != 4 {
        problems.push(format!("{} models in report", report.models.len()));
    }
    let md = std::fs::read_to_string(out.join(eval::REPORT_MARKDOWN)).unwrap_or_default();
    let verbatim = md.contains("| 0.8459 | 0.8460 | 0.8466 | 0.8459 |")
        && md.contains("| 0.8413 | 0.8415 | 0.8427 | 0.8414 |")
        && text.contains("0.8459")
        && text.contains("0.8413");
    if !verbatim {
        problems.push("(d) baseline column missing".into());
    }
    for kind in ModelKind::ALL {
        if !out.join(pipeline::model_file_name(kind)).exists()
            || !out.join(eval::confusion_svg_name(kind.display_name())).exists()
        {
            problems.push(format!("artifacts for {} missing", kind.as_str()));
        }
    }
    let detail = if problems.is_empty() {
        summary.join(", ")
    } else {
        format!("{}; problems: {}", summary.join(", "), problems.join("; "))
    };
    within_time(outcome(problems.is_empty(), detail), elapsed, tol::SCALE_LIMIT_S)
}

fn criterion_7(dirs: &[&Path]) -> Outcome {
    let bytes: Vec<Option<Vec<u8>>> = dirs.iter().map(|d| std::fs::read(d.join(eval::REPORT_JSON)).ok()).collect();
    let all_present = bytes.iter().all(Option::is_some);
    let identical = all_present && bytes.windows(2).all(|w| w[0] == w[1]);
    outcome(
        identical,
        format!(
            "comparison.json byte-identical across threads=1, threads=1, threads=8: {identical}"
        ),
    )
}

// 8. Standardization and correlation properties.

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let d = datagen::generate_dataset(&GeneratorConfig {
        n_total: 3000,
        seed: 8,
        ..GeneratorConfig::default()
    })
    .unwrap();
    let (train, _) = eval::stratified_split(&d, 0.8, 8).unwrap();
    let s = features::fit_standardizer(train.features(), train.feature_names()).unwrap();
    let z = s.apply(train.features()).unwrap();
    let n = z.rows() as f64;
    let (mut worst_mean, mut worst_std) = (0.0f64, 0.0f64);
    for j in 0..z.cols() {
        let col = train.features().column(j);
        if col.iter().all(|&v| v == col[0]) {
            continue;
        }
        let zc = z.column(j);
        let mean = zc.iter().sum::<f64>() / n;
        let std = (zc.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        worst_mean = worst_mean.max(mean.abs());
        worst_std = worst_std.max((std - 1.0).abs());
    }

    let c = features::pearson_correlation(d.features(), d.feature_names()).unwrap();
    let mut asym = 0.0f64;
    let mut diag = 0.0f64;
    for i in 0..c.len() {
        for j in 0..c.len() {
            asym = asym.max((c.get(i, j) - c.get(j, i)).abs());
        }
        let col = d.features().column(i);
        if col.iter().any(|&v| v != col[0]) {
            diag = diag.max((c.get(i, i) - 1.0).abs());
        }
    }
    let pass = worst_mean < tol::STD_ABS
        && worst_std < tol::STD_ABS
        && asym <= tol::CORR_SYM_ABS
        && diag <= tol::CORR_SYM_ABS;
    within_time(
        outcome(
            pass,
            format!("max |mean| {worst_mean:.1e}, max |std-1| {worst_std:.1e}, asymmetry {asym:.1e}, |diag-1| {diag:.1e}"),
        ),
        start.elapsed(),
        tol::STD_LIMIT_S,
    )
}

fn selected() -> Vec<u32> {
    let mut picks: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if picks.is_empty() {
        if let Ok(v) = std::env::var("FRAD_ACCEPTANCE") {
            picks = v.split(',').filter_map(|s| s.trim().parse().ok()).collect();
        }
    }
    if picks.is_empty() {
        picks = (1..=8).collect();
    }
    picks
}

fn report(n: u32, title: &str, o: &Outcome) -> bool {
    println!(
        "criterion {n} [{}] {title}: {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
    o.pass
}

fn main() {
    // `cargo test -- --list` and similar libtest flags probe the target.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let picks = selected();
    let mut ok = true;
    let quick: [(u32, &str, fn() -> Outcome); 5] = [
        (1, "metrics oracle", criterion_1),
        (2, "MLP gradient check", criterion_2),
        (3, "tree root-split oracle", criterion_3),
        (4, "GP and EI sanity", criterion_4),
        (5, "separability limit", criterion_5),
    ];
    for (n, title, f) in quick {
        if picks.contains(&n) {
            ok &= report(n, title, &f());
        }
    }

    if picks.contains(&6) || picks.contains(&7) {
        let root = tempfile::tempdir().unwrap();
        let dirs = [root.path().join("a"), root.path().join("b"), root.path().join("c")];
        let runs = if picks.contains(&7) { 3 } else { 1 };
        let mut first = None;
        let mut failed = None;
        for (i, threads) in [1, 1, 8].into_iter().enumerate().take(runs) {
            match run_all_binary(&dirs[i], threads) {
                Ok(t) => {
                    if i == 0 {
                        first = Some(t);
                    }
                }
                Err(e) => {
                    failed = Some(e);
                    break;
                }
            }
        }
        if picks.contains(&6) {
            let o = match (first, &failed) {
                (Some(t), _) => criterion_6(&dirs[0], t),
                (None, Some(e)) => outcome(false, e.clone()),
                (None, None) => outcome(false, "not run"),
            };
            ok &= report(6, "full-scale run", &o);
        }
        if picks.contains(&7) {
            let o = match &failed {
                Some(e) => outcome(false, e.clone()),
                None => criterion_7(&[&dirs[0], &dirs[1], &dirs[2]]),
            };
            ok &= report(7, "determinism across runs and thread counts", &o);
        }
    }

    if picks.contains(&8) {
        ok &= report(8, "standardization and correlation", &criterion_8());
    }

    if !ok {
        std::process::exit(1);
    }
}
