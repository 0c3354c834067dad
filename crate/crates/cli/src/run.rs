//! Subcommand implementations. Each validates its full configuration
//! before any compute and writes artifacts only under `--out`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result, anyhow, bail};
use log::info;
use serde::Serialize;
use serde_json::json;

use skinny_trees::certify::{CertificateConfig, descent_certificate};
use skinny_trees::data::{CsvOptions, Dataset, SyntheticSpec, TargetKind, TrueSupport};
use skinny_trees::experiments::{
    AblationConfig, Cell, ExperimentGrid, SearchSpace, TuningMode, run_dsl_ablation,
    run_synthetic_grid,
};
use skinny_trees::gradcheck::{GradcheckConfig, run_gradcheck};
use skinny_trees::metrics::{EvalReport, evaluate, write_recovery_csv};
use skinny_trees::persist::{self, ModelJson};
use skinny_trees::rng::{self, purpose};
use skinny_trees::train::{PenaltyMode, TrainConfig, train};
use skinny_trees::{
    EnsembleConfig, EnsembleModel, LossKind, SchedulerConfig, Targets, generate_synthetic,
    load_csv, split, znormalize,
};

use crate::opts::Opts;

const DEFAULT_SPLIT: [f64; 3] = [0.64, 0.16, 0.20];

struct Data {
    ds: Dataset,
    truth: Option<TrueSupport>,
    loss: LossKind,
    source: serde_json::Value,
}

fn loss_kind(o: &Opts) -> Result<LossKind> {
    Ok(o.loss.as_deref().unwrap_or("ls").parse()?)
}

fn parse_kv(spec: &str) -> Result<Vec<(String, String)>> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|kv| {
            let (k, v) = kv.split_once('=').ok_or_else(|| anyhow!("expected key=value, got {kv:?}"))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

fn synthetic_spec(text: &str, seed: u64) -> Result<SyntheticSpec> {
    let (mut sigma, mut p, mut n, mut k) = (None, None, None, None);
    let mut spec = SyntheticSpec::new(1, 1, 0.0, 1);
    for (key, v) in parse_kv(text)? {
        let bad = |e: &dyn std::fmt::Display| anyhow!("--synthetic {key}: {e}");
        match key.as_str() {
            "sigma" => sigma = Some(v.parse::<f64>().map_err(|e| bad(&e))?),
            "p" => p = Some(v.parse::<usize>().map_err(|e| bad(&e))?),
            "n" => n = Some(v.parse::<usize>().map_err(|e| bad(&e))?),
            "k" => k = Some(v.parse::<usize>().map_err(|e| bad(&e))?),
            "noise" => spec.noise_std = v.parse().map_err(|e| bad(&e))?,
            "n_test" => spec.n_test = v.parse().map_err(|e| bad(&e))?,
            other => bail!("--synthetic: unknown key {other:?}"),
        }
    }
    fn need<T>(v: Option<T>, name: &str) -> Result<T> {
        v.ok_or_else(|| anyhow!("--synthetic needs {name}="))
    }
    let spec = SyntheticSpec {
        n_samples: need(n, "n")?,
        n_features: need(p, "p")?,
        correlation: need(sigma, "sigma")?,
        support_size: need(k, "k")?,
        seed,
        ..spec
    };
    spec.validate()?;
    Ok(spec)
}

fn parse_split(text: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("--split {text:?}"))?;
    parts.try_into().map_err(|_| anyhow!("--split needs three fractions"))
}

fn load_data(o: &Opts) -> Result<Data> {
    let loss = loss_kind(o)?;
    let seed = o.seed();
    match (&o.csv, &o.synthetic) {
        (Some(_), Some(_)) => bail!("give either --csv or --synthetic, not both"),
        (None, None) => bail!("no data: give --csv PATH --target NAME or --synthetic SPEC"),
        (None, Some(text)) => {
            if o.split.is_some() || o.task.is_some() {
                bail!("--split and --task do not apply to synthetic data");
            }
            if loss != LossKind::LeastSquares {
                bail!("synthetic data is a regression task; use --loss ls");
            }
            let spec = synthetic_spec(text, seed)?;
            let (ds, truth) = generate_synthetic(&spec)?;
            let source = json!({ "synthetic": spec });
            Ok(Data { ds, truth: Some(truth), loss, source })
        }
        (Some(path), None) => {
            let target = o.target.clone().ok_or_else(|| anyhow!("--csv needs --target"))?;
            let task = match o.task.as_deref() {
                Some("regression") => TargetKind::Regression,
                Some("classification") => TargetKind::Classification,
                Some(other) => bail!("unknown --task {other:?}"),
                None if loss == LossKind::CrossEntropy => TargetKind::Classification,
                None => TargetKind::Regression,
            };
            if (task == TargetKind::Classification) != (loss == LossKind::CrossEntropy) {
                bail!("--loss xent goes with classification, ls with regression");
            }
            let fractions = o.split.as_deref().map(parse_split).transpose()?.unwrap_or(DEFAULT_SPLIT);
            let opts = CsvOptions {
                target,
                categorical: o.categorical.clone().unwrap_or_default(),
                task,
            };
            let ds = split(load_csv(path, &opts)?, fractions, seed)?;
            let normalize = o.normalize.unwrap_or(true);
            let ds = if normalize { znormalize(ds)? } else { ds };
            let source = json!({
                "csv": path, "options": opts, "split": fractions, "normalize": normalize,
            });
            Ok(Data { ds, truth: None, loss, source })
        }
    }
}

fn ensemble_config(o: &Opts, data: &Data) -> Result<EnsembleConfig> {
    let outputs = data.ds.y.output_dim(data.loss);
    let ens = EnsembleConfig::new(
        o.trees.unwrap_or(10),
        o.depth.unwrap_or(3),
        data.ds.n_features(),
        outputs,
    )
    .with_threshold(o.theta.unwrap_or(1.0))
    .with_bias(o.bias.unwrap_or(false));
    ens.validate()?;
    Ok(ens)
}

fn train_config(o: &Opts, loss: LossKind) -> Result<TrainConfig> {
    let penalty = match o.penalty.as_deref().unwrap_or("l0l2") {
        "l0l2" | "group-l0-l2" => PenaltyMode::GroupL0L2,
        "group-lasso" | "lasso" => PenaltyMode::GroupLasso,
        "none" => PenaltyMode::None,
        other => bail!("unknown --penalty {other:?}"),
    };
    if o.lambda0.is_some() && o.dsl_gamma.is_some() {
        bail!("give either --lambda0 (fixed) or --dsl-gamma (scheduler), not both");
    }
    if o.dsl_temp.is_some() && o.dsl_gamma.is_none() {
        bail!("--dsl-temp needs --dsl-gamma");
    }
    if o.lambda1.is_some() && penalty != PenaltyMode::GroupLasso {
        bail!("--lambda1 needs --penalty group-lasso");
    }
    let scheduler = o
        .dsl_gamma
        .map(|g| SchedulerConfig::new(g, o.dsl_temp.unwrap_or(1e-3)))
        .transpose()?;
    let cfg = TrainConfig {
        lambda0: o.lambda0.unwrap_or(0.0),
        lambda2: o.lambda2.unwrap_or(if penalty == PenaltyMode::GroupLasso { 0.0 } else { 1e-2 }),
        lambda1: o.lambda1.unwrap_or(0.0),
        learning_rate: o.lr.unwrap_or(0.05),
        batch_size: o.batch.unwrap_or(32),
        epochs: o.epochs.unwrap_or(100),
        penalty,
        scheduler,
        seed: o.seed(),
        loss,
        leaf_projection_bound: o.leaf_bound,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(o: &Opts) -> Result<PathBuf> {
    let dir = o.out_dir();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(dir, name, text)
}

fn record_run(dir: &Path, command: &str, o: &Opts, extra: serde_json::Value) -> Result<()> {
    write_json(dir, "run_config.json", &json!({ "command": command, "options": o, "resolved": extra }))
}

#[derive(Serialize)]
struct EvalOutput {
    validation: Option<EvalReport>,
    test: Option<EvalReport>,
}

fn eval_splits(model: &EnsembleModel, data: &Data) -> Result<EvalOutput> {
    let run = |rows: &[usize]| -> Result<Option<EvalReport>> {
        if rows.is_empty() {
            return Ok(None);
        }
        Ok(Some(evaluate(model, &data.ds, rows, data.loss, data.truth.as_ref())?))
    };
    Ok(EvalOutput {
        validation: run(&data.ds.split.validation)?,
        test: run(&data.ds.split.test)?,
    })
}

pub fn cmd_train(o: &Opts) -> Result<()> {
    let data = load_data(o)?;
    let ens = ensemble_config(o, &data)?;
    let cfg = train_config(o, data.loss)?;
    let dir = out_dir(o)?;
    record_run(&dir, "train", o, json!({ "data": data.source, "ensemble": ens, "train": cfg }))?;
    info!(
        "training {} trees of depth {} on {} rows × {} features",
        ens.num_trees,
        ens.depth,
        data.ds.split.train.len(),
        ens.num_features
    );
    let (model, report) = train(&data.ds, &ens, &cfg)?;
    let stride = (report.epochs.len() / 10).max(1);
    for e in report.epochs.iter().skip(stride - 1).step_by(stride) {
        info!(
            "epoch {:>4}: objective {:.5} selected {} λ0 {:.4}",
            e.epoch, e.objective, e.selected, e.lambda0
        );
    }
    persist::save(&model, &dir.join("model.skny"))?;
    write_json(&dir, "model.json", &ModelJson::from_model(&model))?;
    write(&dir, "report.jsonl", report.to_jsonl()?)?;
    let eval = eval_splits(&model, &data)?;
    write_json(&dir, "eval.json", &eval)?;
    write_json(&dir, "data.json", &data.ds.sidecar(data.truth.as_ref()))?;
    info!("{} of {} features selected", model.selected_count(), ens.num_features);
    Ok(())
}

pub fn cmd_evaluate(o: &Opts) -> Result<()> {
    let path = o.model.clone().ok_or_else(|| anyhow!("evaluate needs --model PATH"))?;
    let model = persist::load(&path)?;
    let data = load_data(o)?;
    let p = data.ds.n_features();
    if model.config.num_features != p {
        bail!("model expects {} features but the data has {p}", model.config.num_features);
    }
    let outputs = data.ds.y.output_dim(data.loss);
    if model.config.num_outputs != outputs {
        bail!(
            "model has {} outputs but the data and loss need {outputs}",
            model.config.num_outputs
        );
    }
    let dir = out_dir(o)?;
    record_run(&dir, "evaluate", o, json!({ "data": data.source, "model": path }))?;
    let eval = eval_splits(&model, &data)?;
    write_json(&dir, "eval.json", &eval)?;
    Ok(())
}

fn parse_cells(text: &str) -> Result<Vec<Cell>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|c| {
            let f: Vec<&str> = c.trim().split(':').collect();
            if f.len() != 4 {
                bail!("cell {c:?} should be sigma:p:n:k");
            }
            let bad = || anyhow!("cell {c:?} has a malformed number");
            Ok(Cell::new(
                f[0].parse().map_err(|_| bad())?,
                f[1].parse().map_err(|_| bad())?,
                f[2].parse().map_err(|_| bad())?,
                f[3].parse().map_err(|_| bad())?,
            ))
        })
        .collect()
}

/// N ∈ {100, 200, 1000} × σ ∈ {0.5, 0.7} × p ∈ {256, 512}, k = 8.
fn full_grid() -> Vec<Cell> {
    let mut cells = Vec::new();
    for n in [100, 200, 1000] {
        for sigma in [0.5, 0.7] {
            for p in [256, 512] {
                cells.push(Cell::new(sigma, p, n, 8));
            }
        }
    }
    cells
}

pub fn cmd_simulate(o: &Opts) -> Result<()> {
    let cells = o.cells.as_deref().map(parse_cells).transpose()?.unwrap_or_else(full_grid);
    let mut grid = match o.ranges.as_deref().unwrap_or("desk") {
        "desk" => ExperimentGrid::desk(cells),
        "paper" => ExperimentGrid::paper(cells),
        other => bail!("unknown --ranges {other:?}"),
    };
    if let Some(r) = o.repetitions {
        grid.repetitions = r;
    }
    if let Some(t) = o.trials {
        grid.trials = t;
    }
    if let Some(t) = o.tuning.as_deref() {
        grid.tuning = match t {
            "per-repetition" => TuningMode::PerRepetition,
            "per-cell" => TuningMode::PerCell,
            other => bail!("unknown --tuning {other:?}"),
        };
    }
    if let Some(s) = o.noise {
        grid.noise_std = s;
    }
    if let Some(n) = o.n_test {
        grid.n_test = n;
    }
    grid.validate()?;
    let seed = o.seed();
    let dir = out_dir(o)?;
    record_run(&dir, "simulate", o, json!({ "grid": grid, "budgets": o.budgets }))?;
    info!(
        "{} cells × {} repetitions × {} trials",
        grid.cells.len(),
        grid.repetitions,
        grid.trials
    );
    let res = run_synthetic_grid(&grid, seed)?;
    for c in &res.cells {
        info!(
            "{}: test mse {:.3} ± {:.3}, features {:.1} ± {:.1}, f1 {:.3} ± {:.3}",
            c.cell.label(),
            c.row.test_mse.0,
            c.row.test_mse.1,
            c.row.features.0,
            c.row.features.1,
            c.row.f1.0,
            c.row.f1.1
        );
    }
    let mut csv = Vec::new();
    write_recovery_csv(&res.rows(), &mut csv)?;
    write(&dir, "results.csv", csv)?;
    write_json(&dir, "results.json", &res)?;

    if let Some(budgets) = &o.budgets {
        let cell = grid.cells[0];
        let spec = SyntheticSpec {
            noise_std: grid.noise_std,
            n_test: grid.n_test,
            ..SyntheticSpec::new(cell.n, cell.p, cell.sigma, cell.k)
                .with_seed(rng::derive_seed(seed, &[purpose::DATA, u64::MAX - 1]))
        };
        let (ds, _) = generate_synthetic(&spec)?;
        let space: SearchSpace = grid.space.clone();
        let abl = AblationConfig { space, ..AblationConfig::desk(budgets.clone(), grid.trials) };
        let res = run_dsl_ablation(&ds, &abl, seed)?;
        for row in &res.rows {
            let show = |a: &Option<_>| match a {
                Some(skinny_trees::experiments::ArmResult { test_metric, selected, .. }) => {
                    format!("{test_metric:.4} ({selected} features)")
                }
                None => "missing".into(),
            };
            info!("budget {}: fixed {} / dsl {}", row.budget, show(&row.fixed), show(&row.dsl));
        }
        write_json(&dir, "ablation.json", &res)?;
    }
    Ok(())
}

pub fn cmd_gradcheck(o: &Opts) -> Result<()> {
    let cfg = GradcheckConfig {
        instances: o.instances.unwrap_or(200),
        seed: o.seed(),
        ..Default::default()
    };
    let dir = out_dir(o)?;
    record_run(&dir, "gradcheck", o, json!({ "gradcheck": cfg }))?;
    let report = run_gradcheck(&cfg)?;
    write_json(&dir, "gradcheck.json", &report)?;
    info!(
        "{} instances, {} coordinates: max rel err W {:.2e}, O {:.2e}, bias {:.2e}",
        report.instances,
        report.coordinates,
        report.max_rel_err_w,
        report.max_rel_err_o,
        report.max_rel_err_bias
    );
    if !report.passed {
        bail!("gradient check failed on {} coordinates", report.failures);
    }
    Ok(())
}

pub fn cmd_certify_descent(o: &Opts) -> Result<()> {
    let data = load_data(o)?;
    if data.loss != LossKind::LeastSquares || !matches!(data.ds.y, Targets::Regression(_)) {
        bail!("certify-descent needs a regression target and --loss ls");
    }
    let ens = ensemble_config(o, &data)?;
    let rows = data.ds.split.train.clone();
    let mut cfg = train_config(&Opts { batch: Some(rows.len()), ..o.clone() }, data.loss)?;
    if o.lambda2.is_none() {
        cfg.lambda2 = 0.1;
    }
    if cfg.penalty != PenaltyMode::GroupL0L2 || !(cfg.lambda2 > 0.0) {
        bail!("certify-descent needs the l0l2 penalty with --lambda2 > 0");
    }
    let cert_cfg = CertificateConfig { steps: o.steps.unwrap_or(500), ..Default::default() };
    let model = match &o.model {
        Some(path) => {
            let m = persist::load(path)?;
            if m.config != ens {
                bail!("--model does not match the ensemble flags and data");
            }
            m
        }
        None => EnsembleModel::init(ens.clone(), &mut rng::child(cfg.seed, &[purpose::INIT]))?,
    };
    let dir = out_dir(o)?;
    record_run(
        &dir,
        "certify-descent",
        o,
        json!({ "data": data.source, "ensemble": ens, "train": cfg, "certificate": cert_cfg }),
    )?;
    let cert = descent_certificate(data.ds.x.view(), &data.ds.y, &rows, &model, &cfg, &cert_cfg)?;
    write_json(&dir, "certificate.json", &cert)?;
    info!(
        "η = {:.3e} after {} attempts; objective {:.6} → {:.6}; max ‖W‖ {:.4} (bound {:.4})",
        cert.learning_rate,
        cert.attempts.len(),
        cert.initial_objective,
        cert.final_objective,
        cert.max_w_norm,
        cert.w_norm_bound
    );
    if !cert.certified {
        bail!("no learning rate gave a non-increasing objective");
    }
    if !cert.bounded {
        bail!("hyperplane norm exceeded the bound");
    }
    Ok(())
}
