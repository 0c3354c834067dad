//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Criteria 1–4 also run on data ingested from a small
//! CSV file. The brute-force and numeric oracles live here, independent of
//! the library's closed forms.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use skinny_trees::certify::{CertificateConfig, descent_certificate};
use skinny_trees::data::{CsvOptions, Dataset, SyntheticSpec, TargetKind, generate_synthetic};
use skinny_trees::experiments::{Cell, ExperimentGrid, record_trajectory, run_synthetic_grid};
use skinny_trees::gradcheck::{
    GradcheckConfig, GradcheckInstance, check_instance, near_knot, run_gradcheck,
};
use skinny_trees::persist;
use skinny_trees::rng::{self, SeededRng};
use skinny_trees::train::{PenaltyMode, TrainConfig, penalty_value, train};
use skinny_trees::{
    EnsembleConfig, EnsembleModel, LossKind, SchedulerConfig, Targets, backward,
    hard_threshold_group, load_csv, loss_value, scheduler_lambda0, soft_threshold_group, split,
    znormalize,
};

/// Seed for the recovery grids. Fixed before the acceptance runs; the
/// search ranges were explored on other seeds.
const GRID_SEED: u64 = 20_261_014;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn normal(rng: &mut SeededRng) -> f64 {
    rng.sample(StandardNormal)
}

fn log_uniform(rng: &mut SeededRng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

// ---------------------------------------------------------------- CSV data

struct CsvData {
    regression: Dataset,
    classes: Dataset,
}

/// Writes two toy CSV files (a regression target and a three-class label,
/// each with a categorical column) and ingests them.
fn ingest_csv(dir: &Path) -> CsvData {
    let mut rng = rng::seeded(77);
    let mut reg = String::from("x0,x1,x2,shape,y\n");
    let mut cls = String::from("x0,x1,x2,shape,label\n");
    for _ in 0..150 {
        let x: Vec<f64> = (0..3).map(|_| normal(&mut rng) * 2.0 + 1.0).collect();
        let shape = ["round", "square", "flat"][rng.random_range(0..3)];
        let y = x[0] - 0.5 * x[1] + if shape == "round" { 1.0 } else { 0.0 } + 0.1 * normal(&mut rng);
        let label = if x[0] + x[2] > 2.5 { "hi" } else if x[0] > 0.5 { "mid" } else { "lo" };
        reg.push_str(&format!("{},{},{},{shape},{y}\n", x[0], x[1], x[2]));
        cls.push_str(&format!("{},{},{},{shape},{label}\n", x[0], x[1], x[2]));
    }
    std::fs::write(dir.join("reg.csv"), reg).unwrap();
    std::fs::write(dir.join("cls.csv"), cls).unwrap();
    let load = |name: &str, target: &str, task| {
        let opts = CsvOptions { target: target.into(), categorical: vec!["shape".into()], task };
        let ds = load_csv(&dir.join(name), &opts).expect("toy CSV loads");
        znormalize(split(ds, [0.64, 0.16, 0.2], 5).unwrap()).unwrap()
    };
    CsvData {
        regression: load("reg.csv", "y", TargetKind::Regression),
        classes: load("cls.csv", "label", TargetKind::Classification),
    }
}

fn random_model(rng: &mut SeededRng, p: usize, outputs: usize, max_trees: usize, max_depth: usize, scale: f64) -> EnsembleModel {
    let cfg = EnsembleConfig::new(rng.random_range(1..=max_trees), rng.random_range(1..=max_depth), p, outputs)
        .with_threshold(rng.random_range(0.5..1.5))
        .with_bias(rng.random_bool(0.5));
    let mut m = EnsembleModel::zeros(cfg).unwrap();
    m.hyperplanes.weights.mapv_inplace(|_| scale * normal(rng));
    if let Some(b) = m.hyperplanes.biases.as_mut() {
        b.mapv_inplace(|_| 0.3 * normal(rng));
    }
    m.leaves.values.mapv_inplace(|_| normal(rng));
    m
}

fn sample_rows(ds: &Dataset, rng: &mut SeededRng, b: usize) -> (Array2<f64>, Targets) {
    let rows: Vec<usize> = (0..b).map(|_| ds.split.train[rng.random_range(0..ds.split.train.len())]).collect();
    ds.rows(&rows)
}

// ------------------------------------------------------- 1. gradients

fn criterion_gradients(csv: &CsvData) -> Outcome {
    let cfg = GradcheckConfig { instances: 200, seed: 1, ..Default::default() };
    let report = run_gradcheck(&cfg).expect("gradcheck runs");

    // Same check on batches of ingested rows, both losses.
    let mut rng = rng::seeded(2);
    let (mut csv_fail, mut csv_max, mut csv_n) = (0, 0.0f64, 0);
    while csv_n < 40 {
        let (ds, loss) = if csv_n % 2 == 0 {
            (&csv.regression, LossKind::LeastSquares)
        } else {
            (&csv.classes, LossKind::CrossEntropy)
        };
        let b = rng.random_range(1..=8);
        let (x, y) = sample_rows(ds, &mut rng, b);
        let model = random_model(&mut rng, ds.n_features(), ds.y.output_dim(loss), 4, 3, 0.5);
        if near_knot(&model, &x, cfg.knot_margin) {
            continue;
        }
        let inst = GradcheckInstance { model, x, y, loss };
        for t in check_instance(&inst, &cfg).unwrap() {
            csv_max = csv_max.max(t.max_rel_raw);
            csv_fail += t.failures;
        }
        csv_n += 1;
    }
    let passed = report.passed
        && report.instances == 200
        && report.least_squares_instances > 0
        && report.cross_entropy_instances > 0
        && csv_fail == 0;
    outcome(
        passed,
        format!(
            "200 instances ({} ls / {} xent, {} coords): {} failures, max abs err {:.1e}, \
             max unfloored rel err {:.1e}; csv {csv_n} instances: {csv_fail} failures, max unfloored rel err \
             {csv_max:.1e} (tol rel 1e-5, abs floor 1e-8)",
            report.least_squares_instances,
            report.cross_entropy_instances,
            report.coordinates,
            report.failures,
            report.max_abs_err,
            report.max_rel_err_raw,
        ),
    )
}

// ------------------------------------------------------- 2. ℓ0 prox

/// (1/2η)‖W − Z‖² + λ0 · #nonzero groups.
fn l0_objective(w: &Array3<f64>, z: &Array3<f64>, eta: f64, lambda0: f64) -> f64 {
    let mut f = 0.0;
    for (wk, zk) in w.outer_iter().zip(z.outer_iter()) {
        f += wk.iter().zip(zk.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (2.0 * eta);
        if wk.iter().any(|&v| v != 0.0) {
            f += lambda0;
        }
    }
    f
}

/// Enumerates every support; on a fixed support the minimiser copies Z.
fn l0_brute_force(z: &Array3<f64>, eta: f64, lambda0: f64) -> f64 {
    let p = z.len_of(Axis(0));
    let sq: Vec<f64> = z.outer_iter().map(|zk| zk.iter().map(|v| v * v).sum()).collect();
    (0u32..1 << p)
        .map(|s| {
            (0..p)
                .map(|k| if s >> k & 1 == 1 { lambda0 } else { sq[k] / (2.0 * eta) })
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Random Z whose group norms straddle the keep threshold.
fn random_z(rng: &mut SeededRng, p: usize, m: usize, i: usize, threshold: f64) -> Array3<f64> {
    let mut z = Array3::from_shape_fn((p, m, i), |_| normal(rng));
    for mut zk in z.outer_iter_mut() {
        let norm = zk.iter().map(|v| v * v).sum::<f64>().sqrt();
        let target = threshold * rng.random_range(0.3..1.7);
        if norm > 0.0 {
            zk.mapv_inplace(|v| v * target / norm);
        }
    }
    z
}

fn criterion_l0_prox(csv: &CsvData) -> Outcome {
    let mut rng = rng::seeded(3);
    let mut worst: f64 = 0.0;
    let (mut kept, mut groups) = (0, 0);
    for _ in 0..500 {
        let p = rng.random_range(1..=12);
        let (m, i) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let eta = log_uniform(&mut rng, 1e-3, 10.0);
        let lambda0 = log_uniform(&mut rng, 1e-4, 10.0);
        let z = random_z(&mut rng, p, m, i, (2.0 * eta * lambda0).sqrt());
        let w = hard_threshold_group(&z, eta, lambda0);
        let kept_here = w.outer_iter().filter(|wk| wk.iter().any(|&v| v != 0.0)).count();
        kept += kept_here;
        groups += p;
        worst = worst.max(l0_objective(&w, &z, eta, lambda0) - l0_brute_force(&z, eta, lambda0));
    }
    // Z from a gradient step on ingested rows.
    let ds = &csv.regression;
    let mut csv_worst: f64 = 0.0;
    for _ in 0..50 {
        let model = random_model(&mut rng, ds.n_features(), 1, 3, 3, 0.5);
        let (x, y) = sample_rows(ds, &mut rng, 16);
        let (_, g) = backward(x.view(), &y, &model, LossKind::LeastSquares).unwrap();
        let eta = log_uniform(&mut rng, 1e-2, 1.0);
        let z = &model.hyperplanes.weights - &(eta * &g.grad_w);
        let norms: Vec<f64> = z.outer_iter().map(|zk| zk.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        // λ0 placing the threshold at a random group norm's neighbourhood.
        let pick = norms[rng.random_range(0..norms.len())] * rng.random_range(0.8..1.2);
        let lambda0 = pick * pick / (2.0 * eta);
        let w = hard_threshold_group(&z, eta, lambda0);
        csv_worst = csv_worst.max(l0_objective(&w, &z, eta, lambda0) - l0_brute_force(&z, eta, lambda0));
    }
    outcome(
        worst <= 1e-10 && csv_worst <= 1e-10,
        format!(
            "500 instances p<=12 ({kept}/{groups} groups kept): max gap {worst:.1e}; \
             csv 50 instances: max gap {csv_worst:.1e} (tol 1e-10)"
        ),
    )
}

// ------------------------------------------------------- 3. group-lasso prox

/// (1/2η)‖W − Z‖² + (λ1/√g) Σ‖W_k‖.
fn lasso_objective(w: &Array3<f64>, z: &Array3<f64>, eta: f64, lambda1: f64) -> f64 {
    let g = (w.len() / w.len_of(Axis(0)).max(1)) as f64;
    let c = lambda1 / g.sqrt();
    w.outer_iter()
        .zip(z.outer_iter())
        .map(|(wk, zk)| {
            wk.iter().zip(zk.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (2.0 * eta)
                + c * wk.iter().map(|v| v * v).sum::<f64>().sqrt()
        })
        .sum()
}

/// Damped Newton on the smoothed objective (1/2η)‖w − z‖² + c·√(‖w‖² + ε²)
/// for one group, starting from z. The Hessian is aI + b wwᵀ, inverted by
/// Sherman–Morrison.
fn lasso_group_numeric(z: &[f64], eta: f64, c: f64) -> Vec<f64> {
    const EPS: f64 = 1e-13;
    let f = |w: &[f64]| {
        let r2: f64 = w.iter().map(|v| v * v).sum();
        w.iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (2.0 * eta) + c * (r2 + EPS * EPS).sqrt()
    };
    let mut w = z.to_vec();
    for _ in 0..500 {
        let r = (w.iter().map(|v| v * v).sum::<f64>() + EPS * EPS).sqrt();
        let grad: Vec<f64> = w.iter().zip(z).map(|(a, b)| (a - b) / eta + c * a / r).collect();
        if grad.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-15 {
            break;
        }
        let a = 1.0 / eta + c / r;
        let b = -c / (r * r * r);
        let ww: f64 = w.iter().map(|v| v * v).sum();
        let wg: f64 = w.iter().zip(&grad).map(|(p, q)| p * q).sum();
        let coef = b / a * wg / (a + b * ww);
        let step: Vec<f64> = grad.iter().zip(&w).map(|(gi, wi)| gi / a - coef * wi).collect();
        let f0 = f(&w);
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = w.iter().zip(&step).map(|(wi, si)| wi - t * si).collect();
            if f(&cand) <= f0 || t < 1e-20 {
                w = cand;
                break;
            }
            t *= 0.5;
        }
    }
    w
}

fn lasso_numeric(z: &Array3<f64>, eta: f64, lambda1: f64) -> Array3<f64> {
    let g = z.len() / z.len_of(Axis(0)).max(1);
    let c = lambda1 / (g as f64).sqrt();
    let mut w = z.clone();
    for (mut wk, zk) in w.outer_iter_mut().zip(z.outer_iter()) {
        let zk: Vec<f64> = zk.iter().copied().collect();
        for (d, s) in wk.iter_mut().zip(lasso_group_numeric(&zk, eta, c)) {
            *d = s;
        }
    }
    w
}

fn criterion_lasso_prox(csv: &CsvData) -> Outcome {
    let mut rng = rng::seeded(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p = rng.random_range(1..=8);
        let (m, i) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let eta = log_uniform(&mut rng, 1e-2, 10.0);
        let lambda1 = log_uniform(&mut rng, 1e-3, 10.0);
        let tau = eta * lambda1 / ((m * i) as f64).sqrt();
        let z = random_z(&mut rng, p, m, i, tau);
        let closed = soft_threshold_group(&z, eta, lambda1);
        let numeric = lasso_numeric(&z, eta, lambda1);
        worst = worst.max((lasso_objective(&closed, &z, eta, lambda1) - lasso_objective(&numeric, &z, eta, lambda1)).abs());
    }
    let ds = &csv.regression;
    let mut csv_worst: f64 = 0.0;
    for _ in 0..20 {
        let model = random_model(&mut rng, ds.n_features(), 1, 3, 3, 0.5);
        let (x, y) = sample_rows(ds, &mut rng, 16);
        let (_, g) = backward(x.view(), &y, &model, LossKind::LeastSquares).unwrap();
        let eta = 0.1;
        let z = &model.hyperplanes.weights - &(eta * &g.grad_w);
        let lambda1 = log_uniform(&mut rng, 1e-2, 10.0);
        let closed = soft_threshold_group(&z, eta, lambda1);
        let numeric = lasso_numeric(&z, eta, lambda1);
        csv_worst = csv_worst.max((lasso_objective(&closed, &z, eta, lambda1) - lasso_objective(&numeric, &z, eta, lambda1)).abs());
    }
    outcome(
        worst <= 1e-8 && csv_worst <= 1e-8,
        format!("100 instances: max |gap| {worst:.1e}; csv 20 instances: max |gap| {csv_worst:.1e} (tol 1e-8)"),
    )
}

// ------------------------------------------------------- 4. descent

struct DescentCheck {
    ok: bool,
    halvings: usize,
    margin: f64,
}

fn check_descent(ds: &Dataset, model: &EnsembleModel, cfg: &TrainConfig) -> DescentCheck {
    let rows = &ds.split.train;
    let cert = descent_certificate(ds.x.view(), &ds.y, rows, model, cfg, &CertificateConfig::default())
        .expect("certificate runs");
    // Recompute c0 and the bound here rather than trusting the report.
    let (x, y) = ds.rows(rows);
    let c0 = loss_value(x.view(), &y, model, LossKind::LeastSquares).unwrap() + penalty_value(model, cfg, cfg.lambda0);
    let bound = (c0 * model.config.group_len() as f64 / cfg.lambda2).sqrt();
    let increases = cert
        .objectives
        .windows(2)
        .filter(|w| w[1] - w[0] > 1e-10 * w[0].abs().max(1.0))
        .count();
    let max_norm = cert.w_norms.iter().copied().fold(0.0, f64::max);
    DescentCheck {
        ok: cert.certified && cert.steps == 500 && cert.objectives.len() == 501 && increases == 0 && max_norm <= bound,
        halvings: cert.attempts.len() - 1,
        margin: max_norm / bound,
    }
}

fn criterion_descent(csv: &CsvData) -> Outcome {
    let mut rng = rng::seeded(5);
    let (mut failures, mut max_halvings, mut max_ratio) = (0, 0, 0.0f64);
    let mut run = |ds: &Dataset, rng: &mut SeededRng| {
        let model = random_model(rng, ds.n_features(), 1, 3, 3, 0.3);
        let cfg = TrainConfig {
            lambda0: log_uniform(rng, 1e-4, 1e-1),
            lambda2: log_uniform(rng, 1e-2, 1.0),
            learning_rate: 1.0,
            batch_size: ds.split.train.len(),
            penalty: PenaltyMode::GroupL0L2,
            ..Default::default()
        };
        let c = check_descent(ds, &model, &cfg);
        failures += usize::from(!c.ok);
        max_halvings = max_halvings.max(c.halvings);
        max_ratio = max_ratio.max(c.margin);
    };
    for n in 0..20 {
        let spec = SyntheticSpec { n_test: 10, ..SyntheticSpec::new(60, rng.random_range(2..=6), 0.5, 2).with_seed(n) };
        let (ds, _) = generate_synthetic(&spec).unwrap();
        run(&ds, &mut rng);
    }
    for _ in 0..5 {
        run(&csv.regression, &mut rng);
    }
    outcome(
        failures == 0,
        format!(
            "20 instances + 5 csv, 500 full-batch steps: {failures} failing; max halvings {max_halvings}; \
             max ‖W‖/bound {max_ratio:.3} (tol 1e-10)"
        ),
    )
}

// ------------------------------------------------------- 5/6. recovery

fn criterion_recovery(cell: Cell, easy: bool) -> Outcome {
    let grid = ExperimentGrid::desk(vec![cell]);
    let res = match run_synthetic_grid(&grid, GRID_SEED) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("grid failed: {e}")),
    };
    let c = &res.cells[0];
    let (f1, feats, mse) = (c.row.f1, c.row.features, c.row.test_mse);
    let passed = if easy {
        f1.0 >= 0.95 && (7.0..=10.0).contains(&feats.0) && mse.0 <= 0.35
    } else {
        f1.0 >= 0.75
    };
    let per_rep: Vec<String> = c
        .repetitions
        .iter()
        .map(|r| format!("{}/{:.2}/{:.3}", r.outcome.selected, r.outcome.f1, r.outcome.test_mse))
        .collect();
    if easy {
        // Trajectory shape of the first repetition's winner (logged only).
        let rep = &c.repetitions[0];
        let spec = SyntheticSpec::new(cell.n, cell.p, cell.sigma, cell.k).with_seed(rep.data_seed);
        let (ds, _) = generate_synthetic(&spec).unwrap();
        let (ens, cfg) = rep.config.to_configs(cell.p, 1, LossKind::LeastSquares, rep.outcome.train_seed).unwrap();
        let (_, report) = train(&ds, &ens, &cfg).unwrap();
        let traj = record_trajectory(&report);
        let marks: Vec<String> = [0, traj.len() / 4, traj.len() / 2, traj.len() - 1]
            .iter()
            .map(|&i| format!("ep{}:{}", traj[i].epoch, traj[i].selected))
            .collect();
        println!("      trajectory (selected features by epoch): {}", marks.join(" "));
    }
    outcome(
        passed,
        format!(
            "σ={} p={} N={} R={} trials={}: F1 {:.3}±{:.3}, features {:.1}±{:.1}, test MSE {:.3}±{:.3} \
             [per rep sel/F1/MSE: {}]",
            cell.sigma,
            cell.p,
            cell.n,
            grid.repetitions,
            grid.trials,
            f1.0,
            f1.1,
            feats.0,
            feats.1,
            mse.0,
            mse.1,
            per_rep.join(" ")
        ),
    )
}

// ------------------------------------------------------- 7. partition

fn criterion_partition() -> Outcome {
    let mut rng = rng::seeded(7);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let p = rng.random_range(1..=12);
        let outputs = rng.random_range(1..=3);
        let model = random_model(&mut rng, p, outputs, 5, 6, 1.0);
        let x: Vec<f64> = (0..p).map(|_| 2.0 * normal(&mut rng)).collect();
        let probs = model.leaf_probabilities(&x).unwrap();
        for tree in probs.outer_iter() {
            worst = worst.max((tree.sum() - 1.0).abs());
        }
    }
    outcome(worst <= 1e-12, format!("1000 pairs: max |Σ_l P − 1| = {worst:.1e} (tol 1e-12)"))
}

// ------------------------------------------------------- 8. sparse inference

fn criterion_sparse() -> Outcome {
    let spec = SyntheticSpec { n_test: 500, ..SyntheticSpec::new(400, 40, 0.5, 4).with_seed(8) };
    let (ds, _) = generate_synthetic(&spec).unwrap();
    let ens = EnsembleConfig::new(5, 3, 40, 1).with_bias(true);
    let cfg = TrainConfig { lambda2: 0.1, learning_rate: 0.1, batch_size: 32, epochs: 20, seed: 8, ..Default::default() };
    let (mut model, _) = train(&ds, &ens, &cfg).unwrap();
    // Threshold at the median group norm so roughly half the features go.
    let mut norms: Vec<f64> = (0..40).map(|k| model.hyperplanes.group_norm(k)).collect();
    norms.sort_by(f64::total_cmp);
    let median = norms[20];
    model.hyperplanes.weights = hard_threshold_group(&model.hyperplanes.weights, 1.0, median * median / 2.0);
    let mask = model.support_mask();
    let kept = mask.count();
    let x = ds.x.view();
    let dense = model.predict_batch(x, None).unwrap();
    let sparse = model.predict_batch(x, Some(&mask)).unwrap();
    let bitwise = dense.iter().zip(sparse.iter()).all(|(a, b)| a.to_bits() == b.to_bits());

    let mut rng = rng::seeded(9);
    let mut perturbed = ds.x.clone();
    for k in (0..40).filter(|&k| !mask.selected[k]) {
        for v in perturbed.column_mut(k) {
            *v = normal(&mut rng) * 10f64.powi(rng.random_range(-3..=12));
        }
    }
    let dense_p = model.predict_batch(perturbed.view(), None).unwrap();
    let sparse_p = model.predict_batch(perturbed.view(), Some(&mask)).unwrap();
    let invariant = dense_p.iter().chain(sparse_p.iter()).zip(dense.iter().chain(dense.iter())).all(|(a, b)| a.to_bits() == b.to_bits());
    let thresholded = kept > 0 && kept < 40;
    outcome(
        thresholded && bitwise && invariant,
        format!(
            "{kept}/40 features kept; sparse == dense bitwise: {bitwise}; invariant to perturbed unselected columns: {invariant}"
        ),
    )
}

// ------------------------------------------------------- 9. determinism

fn criterion_determinism(dir: &Path) -> Outcome {
    let spec = SyntheticSpec { n_test: 100, ..SyntheticSpec::new(300, 20, 0.5, 3).with_seed(10) };
    let (ds, _) = generate_synthetic(&spec).unwrap();
    let ens = EnsembleConfig::new(4, 2, 20, 1).with_bias(true);
    let cfg = TrainConfig {
        lambda2: 0.1,
        learning_rate: 0.05,
        batch_size: 16,
        epochs: 30,
        scheduler: Some(SchedulerConfig::new(0.2, 1e-3).unwrap()),
        seed: 10,
        ..Default::default()
    };
    let mut files = Vec::new();
    for run in 0..2 {
        let (model, _) = train(&ds, &ens, &cfg).unwrap();
        let path = dir.join(format!("model{run}.skny"));
        persist::save(&model, &path).unwrap();
        files.push(std::fs::read(&path).unwrap());
    }
    let (other, _) = train(&ds, &ens, &TrainConfig { seed: 11, ..cfg.clone() }).unwrap();
    let differs = persist::encode(&other) != files[0];
    outcome(
        files[0] == files[1] && differs,
        format!("two runs, {} bytes each: identical {}; another seed differs {differs}", files[0].len(), files[0] == files[1]),
    )
}

// ------------------------------------------------------- 10. scheduler

fn criterion_scheduler() -> Outcome {
    let (mut checked, mut bad) = (0usize, Vec::new());
    let gammas = [1e-3, 0.1, 1.0, 3.0, 100.0, 1e4, 1e6];
    let temps = [1e-6, 1e-4, 1e-2, 0.1, 1.0, 10.0];
    for &gamma in &gammas {
        for &s in &temps {
            let cfg = SchedulerConfig::new(gamma, s).unwrap();
            if scheduler_lambda0(0, &cfg) != 0.0 {
                bad.push(format!("λ0(0)≠0 at γ={gamma} s={s}"));
            }
            let plateau_start = (25.0 / s).ceil() as u64;
            let mut steps: Vec<u64> = (0..2000).collect();
            steps.extend((0..60).map(|e| (1.5f64.powi(e)) as u64 + 2000));
            steps.extend([plateau_start.saturating_sub(1), plateau_start, plateau_start + 1, plateau_start * 4]);
            steps.sort_unstable();
            steps.dedup();
            let mut prev = 0.0;
            for &t in &steps {
                let v = scheduler_lambda0(t, &cfg);
                checked += 1;
                if v < prev || !(v >= 0.0 && v <= gamma) {
                    bad.push(format!("not monotone/in range at γ={gamma} s={s} t={t}"));
                }
                // 1e-9 relative to max(1, γ): γ·e^{-25} ≈ 1.4e-11·γ.
                if s * t as f64 >= 25.0 && (v - gamma).abs() > 1e-9 * gamma.max(1.0) {
                    bad.push(format!("plateau miss at γ={gamma} s={s} t={t}: {:.3e}", (v - gamma).abs()));
                }
                prev = v;
            }
        }
    }
    outcome(
        bad.is_empty(),
        format!(
            "{} (γ, s) pairs, {checked} evaluations: {} violations{}",
            gammas.len() * temps.len(),
            bad.len(),
            bad.first().map(|b| format!(" (first: {b})")).unwrap_or_default()
        ),
    )
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temp dir");
    let csv = ingest_csv(dir.path());
    println!(
        "acceptance: toy CSV ingested ({} regression rows × {} features, {} classification rows)",
        csv.regression.n_rows(),
        csv.regression.n_features(),
        csv.classes.n_rows()
    );

    type Check<'a> = Box<dyn FnOnce() -> Outcome + 'a>;
    let criteria: Vec<(&str, Check)> = vec![
        ("gradient exactness", Box::new(|| criterion_gradients(&csv))),
        ("l0 prox global optimality", Box::new(|| criterion_l0_prox(&csv))),
        ("group-lasso prox optimality", Box::new(|| criterion_lasso_prox(&csv))),
        ("descent certificate", Box::new(|| criterion_descent(&csv))),
        ("recovery, easy cell", Box::new(|| criterion_recovery(Cell::new(0.5, 256, 1000, 8), true))),
        ("recovery, hard cell", Box::new(|| criterion_recovery(Cell::new(0.7, 512, 100, 8), false))),
        ("probability partition", Box::new(criterion_partition)),
        ("sparse inference equivalence", Box::new(criterion_sparse)),
        ("determinism", Box::new(|| criterion_determinism(dir.path()))),
        ("scheduler contract", Box::new(criterion_scheduler)),
    ];

    // ACCEPTANCE_ONLY=1,2,7 runs a subset while iterating locally.
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let (mut failed, mut skipped) = (0, 0);
    for (n, (name, check)) in criteria.into_iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(n + 1))) {
            println!("criterion {:>2} [SKIP] {name}", n + 1);
            skipped += 1;
            continue;
        }
        let start = Instant::now();
        let o = check();
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        failed += usize::from(!o.passed);
        println!(
            "criterion {:>2} [{verdict}] {name} ({:.1}s): {}",
            n + 1,
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed, {skipped} skipped", 10 - failed - skipped);
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
