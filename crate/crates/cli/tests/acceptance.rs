//! Acceptance criteria, one pass/fail line each. Exits nonzero if any fail.

mod common;

use std::path::Path;
use std::time::Instant;

use clap::Parser;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pie_cli::{cmd_cv, cmd_train, Cli, Command};
use pie_core::basis::{build_design, specs_for_dataset, BasisKind};
use pie_core::boost::leaf_weight;
use pie_core::dataio::{holdout_split, standardize, Dataset};
use pie_core::gam::{block_gradient, group_prox};
use pie_core::loss::{negative_gradient, LossKind};
use pie_core::metrics::{cross_validate, evaluate, pi_score, rpe, sensitivity_grid, spearman, best_selection};
use pie_core::persist::{load_model, save_model, to_json_string};
use pie_core::synthetic;
use pie_core::trainer::{fit_pie, PieConfig, PieModel};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Golden-section bracket on [a, b], then bisection on the sign of
/// `f(m + h(m)) - f(m - h(m))`.
fn minimize_1d(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, h: impl Fn(f64) -> f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..60 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let (mut lo, mut hi) = (a - 1e-6, b + 1e-6);
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        if m == lo || m == hi {
            break;
        }
        if f(m + h(m)) > f(m - h(m)) {
            hi = m;
        } else {
            lo = m;
        }
    }
    0.5 * (lo + hi)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let d = rng.random_range(1..=12);
        let gamma: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let lambda = rng.random_range(0.0..2.0);
        let delta = rng.random_range(0.01..2.0);
        let got = group_prox(&gamma, lambda * delta);
        let g = norm(&gamma);
        // objective restricted to alpha = t * gamma / |gamma|, t in [0, |gamma|]
        let obj = |t: f64| lambda * t.abs() + (t - g).powi(2) / (2.0 * delta);
        let t = minimize_1d(obj, 0.0, g, |m| 0.5 * m);
        let t = if obj(0.0) <= obj(t) { 0.0 } else { t };
        for (a, gi) in got.iter().zip(&gamma) {
            worst = worst.max((a - t * gi / g).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-6 && secs < 10.0, format!("max error {worst:.2e}, {secs:.2}s"))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(5..200);
        let m = rng.random_range(1..=n);
        let r: Vec<f64> = (0..m).map(|_| rng.random_range(-4.0..4.0)).collect();
        let lambda2 = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..1.0) };
        let obj = |w: f64| r.iter().map(|v| (v - w).powi(2)).sum::<f64>() / n as f64 + lambda2 * (1.0 + w * w);
        let oracle = minimize_1d(obj, -5.0, 5.0, |_| 0.5);
        let got = leaf_weight(r.iter().sum(), m, n, lambda2);
        worst = worst.max((got - oracle).abs());
    }
    outcome(worst <= 1e-8, format!("max error {worst:.2e}"))
}

fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize, logistic: bool) -> Dataset {
    let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0f64..2.0));
    let y: Array1<f64> = (0..n)
        .map(|i| {
            let s = x[(i, 0)].sin() + 0.5 * x[(i, d - 1)] + rng.random_range(-0.5..0.5);
            if logistic { if s > 0.0 { 1.0 } else { -1.0 } } else { s }
        })
        .collect();
    let names: Vec<String> = (0..d).map(|j| format!("v{j}")).collect();
    Dataset::from_numeric(x, Some(y), &names).unwrap()
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let h = 1e-6;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
    let mut worst = 0.0f64;
    for inst in 0..100 {
        let loss = if inst % 2 == 0 { LossKind::Squared } else { LossKind::Logistic };
        let n = rng.random_range(20..60);
        let ds = random_dataset(&mut rng, n, 2, loss == LossKind::Logistic);
        let (mut specs, _) = specs_for_dataset(&ds, BasisKind::Bspline, 6, 3).unwrap();
        let designs = build_design(&ds, &mut specs).unwrap();
        let y = ds.y().unwrap().to_vec();
        let psi = &designs[0];
        let alpha: Vec<f64> = (0..psi.n_basis()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let other: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fit_for = |a: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| other[i] + psi.values().row(i).iter().zip(a).map(|(p, c)| p * c).sum::<f64>())
                .collect()
        };
        let mean_loss = |a: &[f64]| loss.mean_loss(&y, &fit_for(a));
        let grad = block_gradient(psi, &y, &fit_for(&alpha), loss);
        for k in 0..alpha.len() {
            let (mut up, mut down) = (alpha.clone(), alpha.clone());
            up[k] += h;
            down[k] -= h;
            let fd = (mean_loss(&up) - mean_loss(&down)) / (2.0 * h);
            if fd.abs() > 1e-7 || grad[k].abs() > 1e-7 {
                worst = worst.max(rel(fd, grad[k]));
            }
        }
        let fit = fit_for(&alpha);
        let r = negative_gradient(&y, &fit, loss);
        for i in 0..n {
            let fd = -(loss.loss(y[i], fit[i] + h) - loss.loss(y[i], fit[i] - h)) / (2.0 * h);
            worst = worst.max(rel(fd, r[i]));
        }
    }
    outcome(worst <= 1e-5, format!("max relative error {worst:.2e}"))
}

fn criterion_4() -> Outcome {
    let mut violations = 0;
    let mut fits = 0;
    let mut accepted_trees = 0;
    for seed in 0..20u64 {
        let ds = synthetic::standardized(&synthetic::interaction(500, 6, 0.1, 400 + seed));
        let (ds, loss) = if seed % 4 == 3 {
            (synthetic::to_binary(&ds), LossKind::Logistic)
        } else {
            (ds, LossKind::Squared)
        };
        let lambda2 = [1e-6, 1e-5, 1e-4, 1e-2][(seed % 4) as usize];
        let lambda1 = [1e-4, 1e-3, 1e-2, 1e-1][(seed / 5 % 4) as usize];
        let cfg = PieConfig { loss, ..PieConfig::default() }.with_lambdas(lambda1, lambda2);
        let m = fit_pie(&ds, &cfg).unwrap();
        fits += 1;
        accepted_trees += m.boost.trees.len();
        let t = &m.meta.objective_trace;
        violations += t.windows(2).filter(|w| w[1] > w[0] + 1e-10 * (1.0 + w[0].abs())).count();
    }
    outcome(
        violations == 0,
        format!("{fits} fits, {accepted_trees} trees accepted, {violations} increases"),
    )
}

fn criterion_5() -> Outcome {
    let ds = synthetic::standardized(&synthetic::interaction(400, 3, 0.1, 5));
    let m2 = fit_pie(&ds, &PieConfig::default().with_lambdas(1e-3, f64::INFINITY)).unwrap();
    let pi = pi_score(&m2, &ds).unwrap();
    let m1 = fit_pie(&ds, &PieConfig::default().with_lambdas(f64::INFINITY, 1e-5)).unwrap();
    let all_zero = m1.gam.coefficients.iter().flatten().all(|&c| c == 0.0);
    outcome(
        pi == 1.0 && m2.boost.is_empty() && all_zero && !m1.boost.is_empty(),
        format!("pi-score {pi} with lambda2=inf; lambda1=inf zero blocks {all_zero}, {} trees", m1.boost.trees.len()),
    )
}

fn criterion_6() -> Outcome {
    use nalgebra::{DMatrix, DVector};
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let (n, d) = (200, 5);
    let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0f64..1.0));
    let beta = [1.5, -2.0, 0.5, 0.0, 3.0];
    let y: Array1<f64> = (0..n)
        .map(|i| 0.7 + (0..d).map(|j| beta[j] * x[(i, j)]).sum::<f64>() + rng.random_range(-0.3..0.3))
        .collect();
    let names: Vec<String> = (0..d).map(|j| format!("v{j}")).collect();
    let ds = Dataset::from_numeric(x.clone(), Some(y.clone()), &names).unwrap();
    let cfg = PieConfig {
        basis: BasisKind::Identity,
        max_iter: 100_000,
        tol: 1e-16,
        ..PieConfig::default()
    }
    .with_lambdas(0.0, f64::INFINITY);
    let m = fit_pie(&ds, &cfg).unwrap();

    let a = DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
    let b = DVector::from_iterator(n, y.iter().copied());
    let coef = (a.transpose() * &a).lu().solve(&(a.transpose() * b)).unwrap();
    let mut worst = 0.0f64;
    let mut fitted_intercept = m.gam.intercept;
    for j in 0..d {
        let c = m.gam.coefficients[j][0];
        worst = worst.max((c - coef[j + 1]).abs());
        fitted_intercept -= c * m.gam.specs[j].offsets[0];
    }
    worst = worst.max((fitted_intercept - coef[0]).abs());
    outcome(
        worst <= 1e-6,
        format!("max coefficient error {worst:.2e} after {} iterations", m.meta.iterations),
    )
}

/// Raw synthetic split standardized with training statistics.
fn split_synthetic(n: usize, n_noise: usize, seed: u64) -> (Dataset, Dataset) {
    let raw = synthetic::interaction(n, n_noise, 0.1, seed);
    let split = holdout_split(n, 0.25, seed).unwrap();
    let (train_raw, test_raw) = (raw.subset(&split.train), raw.subset(&split.test));
    let (train, scaler) = standardize(&train_raw, &train_raw).unwrap();
    (train, scaler.apply(&test_raw).unwrap())
}

fn tuned(train: &Dataset, test: &Dataset, l1: &[f64], l2: &[f64]) -> (PieModel, f64) {
    let table = cross_validate(train, l1, l2, 5, 7, &PieConfig::default()).unwrap();
    let s = best_selection(&table).unwrap();
    let m = fit_pie(train, &PieConfig::default().with_lambdas(s.lambda1, s.lambda2)).unwrap();
    let r = evaluate(&m, test).unwrap().rpe.unwrap();
    (m, r)
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let (train, test) = split_synthetic(2000, 0, 7);
    let l1 = [1e-4, 1e-3, 1e-2];
    let (gam, gam_rpe) = tuned(&train, &test, &l1, &[f64::INFINITY]);
    let (pie, pie_rpe) = tuned(&train, &test, &l1, &[0.0, 1e-6, 1e-5, 1e-4]);
    let pi = pi_score(&pie, &test).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let ratio = pie_rpe / gam_rpe;
    outcome(
        ratio <= 0.9 && pi > 0.3 && pi < 1.0 && secs < 120.0,
        format!(
            "PIE RPE {pie_rpe:.4} (lambda1 {}, lambda2 {}), GAM RPE {gam_rpe:.4} (lambda1 {}), ratio {ratio:.3}, pi-score {pi:.3}, {secs:.1}s",
            pie.config.lambda1, pie.config.lambda2, gam.config.lambda1
        ),
    )
}

fn criterion_8() -> Outcome {
    let grid = pie_core::metrics::default_lambda1_grid();
    let mut passed = 0;
    let mut notes = Vec::new();
    for seed in 0..5u64 {
        let ds = synthetic::standardized(&synthetic::interaction(1000, 16, 0.1, 800 + seed));
        let mut hit = None;
        for &l1 in &grid {
            let m = fit_pie(&ds, &PieConfig::default().with_lambdas(l1, 0.01)).unwrap();
            let active = m.active_features();
            let relevant = synthetic::RELEVANT.iter().all(|r| active.iter().any(|a| a == r));
            let irrelevant = active.iter().filter(|a| a.starts_with('z')).count();
            if relevant && irrelevant <= 2 {
                hit = Some((l1, active.len()));
                break;
            }
        }
        match hit {
            Some((l1, k)) => {
                passed += 1;
                notes.push(format!("seed {seed}: lambda1 {l1} |S|={k}"));
            }
            None => notes.push(format!("seed {seed}: none")),
        }
    }
    outcome(passed >= 4, format!("{passed}/5 ({})", notes.join("; ")))
}

fn criterion_9() -> Outcome {
    let ds = synthetic::standardized(&synthetic::interaction(1200, 2, 0.1, 9));
    let l1 = [1e-4, 1e-3, 1e-2, 1e-1];
    let l2 = [1e-6, 1e-5, 1e-4, 1e-3];
    let g = sensitivity_grid(&ds, &l1, &l2, 0.25, 9, &PieConfig::default()).unwrap();
    let (mut xs2, mut rpes, mut xs1, mut pis) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, &a) in l1.iter().enumerate() {
        for (j, &b) in l2.iter().enumerate() {
            xs2.push(b);
            rpes.push(g.rpe[i][j].unwrap());
            xs1.push(a);
            pis.push(g.pi_score[i][j].unwrap());
        }
    }
    let rho_rpe = spearman(&xs2, &rpes);
    let rho_pi = spearman(&xs1, &pis);
    outcome(
        rho_rpe > 0.0 && rho_pi < 0.0,
        format!("Spearman(RPE, lambda2) {rho_rpe:.3}, Spearman(pi-score, lambda1) {rho_pi:.3}"),
    )
}

fn parse(args: &[&str]) -> Command {
    let mut full = vec!["pie"];
    full.extend_from_slice(args);
    Cli::try_parse_from(full).unwrap().command
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn test_rpe(model_path: &Path, test: &Dataset) -> (f64, usize) {
    let m = load_model(model_path).unwrap();
    let preds: Vec<f64> = m.predict_dataset(test).unwrap().iter().map(|p| p.score).collect();
    (rpe(&preds, test.y().unwrap().as_slice().unwrap()).unwrap(), m.active_set().len())
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let raw = synthetic::interaction(1200, 16, 0.1, 10);
    let split = holdout_split(1200, 0.25, 10).unwrap();
    let (data, schema) = common::write_dataset(dir.path(), "train", &raw.subset(&split.train));
    let mut results = Vec::new();
    for (name, cap) in [("free", None), ("sparse", Some("8"))] {
        let out = dir.path().join(format!("{name}.pie.json"));
        let mut args = vec!["train", "--data", s(&data), "--schema", s(&schema), "--lambda1", "auto",
            "--lambda2", "auto", "--out", s(&out)];
        if let Some(c) = cap {
            args.extend_from_slice(&["--max-active", c]);
        }
        let Command::Train(t) = parse(&args) else { unreachable!() };
        cmd_train(&t).unwrap();
        let m = load_model(&out).unwrap();
        let test = m.preprocessing.as_ref().unwrap().transform(&raw.subset(&split.test)).unwrap();
        results.push(test_rpe(&out, &test));
    }
    let ((free, free_k), (sparse, sparse_k)) = (results[0], results[1]);
    outcome(
        sparse_k <= 8 && sparse <= 1.15 * free,
        format!("sparse |S|={sparse_k} RPE {sparse:.4}; unconstrained |S|={free_k} RPE {free:.4}"),
    )
}

fn criterion_11() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let ds = synthetic::standardized(&synthetic::interaction(500, 3, 0.1, 11));
    let m = fit_pie(&ds, &PieConfig::default().with_lambdas(1e-3, 1e-5)).unwrap();
    let path = dir.path().join("m.pie.json");
    save_model(&m, &path).unwrap();
    let back = load_model(&path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(111);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let row = Array1::from_shape_fn(ds.n_columns(), |_| rng.random_range(-3.0..3.0));
        let (a, b) = (m.score(row.view()), back.score(row.view()));
        if a.to_bits() != b.to_bits() {
            mismatches += 1;
        }
    }
    let bytes = std::fs::read(&path).unwrap();
    let resaved = to_json_string(&back).unwrap().into_bytes();
    outcome(
        mismatches == 0 && bytes == resaved,
        format!("{mismatches} prediction mismatches, re-save identical: {}", bytes == resaved),
    )
}

fn criterion_12() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema) = common::synthetic_csv(dir.path(), "d", 300, 2, 12);
    let model = dir.path().join("m.pie.json");
    let cv = dir.path().join("cv.json");
    let train_args = ["train", "--data", s(&data), "--schema", s(&schema), "--lambda1", "auto", "--lambda2",
        "auto", "--lambda1-grid", "1e-3,1e-2", "--lambda2-grid", "1e-5,inf", "--folds", "3", "--seed", "5",
        "--out", s(&model)];
    let cv_args = ["cv", "--data", s(&data), "--schema", s(&schema), "--lambda1-grid", "1e-3,1e-2",
        "--lambda2-grid", "1e-5,inf", "--folds", "3", "--seed", "5", "--nested", "--out", s(&cv)];
    let files = ["m.pie.json", "m.train.json", "m.cv.csv", "m.cv.json", "cv.json", "cv.csv"];
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let Command::Train(t) = parse(&train_args) else { unreachable!() };
        cmd_train(&t).unwrap();
        let Command::Cv(c) = parse(&cv_args) else { unreachable!() };
        cmd_cv(&c).unwrap();
        snapshots.push(files.map(|f| std::fs::read(dir.path().join(f)).unwrap()));
    }
    let differing: Vec<&str> = files
        .iter()
        .zip(snapshots[0].iter().zip(&snapshots[1]))
        .filter(|(_, (a, b))| a != b)
        .map(|(f, _)| *f)
        .collect();
    outcome(differing.is_empty(), format!("{} files compared, differing: {differing:?}", files.len()))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 12] = [
        ("prox oracle", criterion_1),
        ("leaf-weight oracle", criterion_2),
        ("gradient checks", criterion_3),
        ("global descent", criterion_4),
        ("limit cases", criterion_5),
        ("least-squares equivalence", criterion_6),
        ("interaction benefit", criterion_7),
        ("support recovery", criterion_8),
        ("sensitivity trends", criterion_9),
        ("sparse selection", criterion_10),
        ("persistence", criterion_11),
        ("determinism", criterion_12),
    ];
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if filter.as_ref().is_some_and(|want| *want != id) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "[{tag}] criterion {id} {name}: {} ({:.1}s)",
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
