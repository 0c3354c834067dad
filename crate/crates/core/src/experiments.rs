//! Desk-scale studies: the synthetic support-recovery grid, the
//! dense-to-sparse vs fixed-λ0 ablation, and training trajectories.
//!
//! Seed splitting: every draw descends from the grid seed through
//! [`rng::derive_seed`] with a tag path, so results do not depend on the
//! order in which cells or trials are evaluated.
//!
//! | stream                          | tags                                   |
//! |---------------------------------|----------------------------------------|
//! | hyperparameter draws for a cell | `[TUNE, cell]`                         |
//! | data for the tuning dataset     | `[DATA, cell, TUNING_DATASET]`         |
//! | data for repetition `r`         | `[DATA, cell, r]`                      |
//! | training seed of trial `i`      | `[TRAIN, cell, TUNING_DATASET, i]`     |
//! | training seed of repetition `r` | `[TRAIN, cell, r]`                     |
//!
//! With [`TuningMode::PerRepetition`] the tuning dataset of repetition `r`
//! is the repetition's own dataset and trial seeds use `[TRAIN, cell, r, i]`.

use log::{info, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SyntheticSpec, TrueSupport, generate_synthetic};
use crate::error::{Error, Result};
use crate::gradients::{LossKind, Targets};
use crate::metrics::{Direction, RecoveryRow, Trial, evaluate, mean_se, select_within_budget};
use crate::model::{EnsembleConfig, EnsembleModel};
use crate::rng::{self, SeededRng, purpose};
use crate::schedule::SchedulerConfig;
use crate::train::{PenaltyMode, TrainConfig, TrainReport, train};

const TUNING_DATASET: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntRange {
    pub lo: usize,
    pub hi: usize,
}

impl IntRange {
    pub fn new(lo: usize, hi: usize) -> Self {
        Self { lo, hi }
    }

    fn check(&self, name: &str) -> Result<()> {
        if self.lo == 0 || self.lo > self.hi {
            return Err(Error::Config(format!("{name} range [{}, {}] is empty", self.lo, self.hi)));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut SeededRng) -> usize {
        rng.random_range(self.lo..=self.hi)
    }
}

/// Log-uniform range; `lo == hi` pins the value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRange {
    pub lo: f64,
    pub hi: f64,
}

impl LogRange {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn fixed(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.lo > 0.0 && self.lo <= self.hi && self.hi.is_finite()) {
            return Err(Error::Config(format!("{name} range [{}, {}] is invalid", self.lo, self.hi)));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut SeededRng) -> f64 {
        // Always consume one draw so pinned ranges keep the other streams aligned.
        let u: f64 = rng.random();
        if self.lo == self.hi {
            return self.lo;
        }
        (self.lo.ln() + u * (self.hi.ln() - self.lo.ln())).exp()
    }
}

/// Random-search ranges. Batch sizes are `batch_unit * b` with `b` drawn
/// from `batch_multiplier`, capped at the training-set size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub trees: IntRange,
    pub depth: IntRange,
    pub batch_unit: usize,
    pub batch_multiplier: IntRange,
    pub epochs: IntRange,
    pub learning_rate: LogRange,
    pub lambda2: LogRange,
    /// Scheduler plateau γ.
    pub gamma: LogRange,
    pub temperature: LogRange,
}

impl SearchSpace {
    /// The published ranges (γ pinned at 100).
    pub fn paper() -> Self {
        Self {
            trees: IntRange::new(1, 50),
            depth: IntRange::new(1, 5),
            batch_unit: 16,
            batch_multiplier: IntRange::new(1, 8),
            epochs: IntRange::new(5, 500),
            learning_rate: LogRange::new(1e-3, 1e-1),
            lambda2: LogRange::new(1e-2, 1e2),
            gamma: LogRange::fixed(100.0),
            temperature: LogRange::new(1e-4, 0.1),
        }
    }

    /// Ranges sized for a single-core run. γ is searched (and the
    /// temperature floor lowered) because with this parameterisation a
    /// plateau of 100 zeroes every group long before the hyperplanes grow.
    pub fn desk() -> Self {
        Self {
            trees: IntRange::new(1, 40),
            depth: IntRange::new(1, 3),
            batch_unit: 16,
            batch_multiplier: IntRange::new(1, 4),
            epochs: IntRange::new(20, 500),
            learning_rate: LogRange::new(1e-2, 1.0),
            lambda2: LogRange::new(1e-2, 1e2),
            gamma: LogRange::new(3e-2, 10.0),
            temperature: LogRange::new(1e-5, 1e-2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.trees.check("trees")?;
        self.depth.check("depth")?;
        self.batch_multiplier.check("batch multiplier")?;
        self.epochs.check("epochs")?;
        if self.batch_unit == 0 {
            return Err(Error::Config("batch unit must be positive".into()));
        }
        self.learning_rate.check("learning rate")?;
        self.lambda2.check("lambda2")?;
        self.gamma.check("gamma")?;
        self.temperature.check("temperature")?;
        Ok(())
    }

    /// Draws one configuration. The draw order is fixed.
    pub fn sample(&self, rng: &mut SeededRng, n_train: usize) -> TrialConfig {
        let trees = self.trees.sample(rng);
        let depth = self.depth.sample(rng);
        let batch_size = (self.batch_unit * self.batch_multiplier.sample(rng)).min(n_train);
        let epochs = self.epochs.sample(rng);
        let learning_rate = self.learning_rate.sample(rng);
        let lambda2 = self.lambda2.sample(rng);
        let gamma = self.gamma.sample(rng);
        let temperature = self.temperature.sample(rng);
        TrialConfig { trees, depth, batch_size, epochs, learning_rate, lambda2, gamma, temperature }
    }
}

/// One point of the search space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub trees: usize,
    pub depth: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub lambda2: f64,
    pub gamma: f64,
    pub temperature: f64,
}

impl TrialConfig {
    /// Group ℓ0-ℓ2 training with the dense-to-sparse scheduler.
    pub fn to_configs(&self, p: usize, outputs: usize, loss: LossKind, seed: u64) -> Result<(EnsembleConfig, TrainConfig)> {
        let ens = EnsembleConfig::new(self.trees, self.depth, p, outputs);
        let cfg = TrainConfig {
            lambda2: self.lambda2,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            penalty: PenaltyMode::GroupL0L2,
            scheduler: Some(SchedulerConfig::new(self.gamma, self.temperature)?),
            seed,
            loss,
            ..Default::default()
        };
        Ok((ens, cfg))
    }
}

/// A synthetic cell: AR(1) correlation σ, p features, N rows, k true features.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub sigma: f64,
    pub p: usize,
    pub n: usize,
    pub k: usize,
}

impl Cell {
    pub fn new(sigma: f64, p: usize, n: usize, k: usize) -> Self {
        Self { sigma, p, n, k }
    }

    pub fn label(&self) -> String {
        format!("sigma={},p={},n={},k={}", self.sigma, self.p, self.n, self.k)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuningMode {
    /// Tune once per cell on its own dataset, then retrain the winner on R
    /// fresh datasets.
    PerCell,
    /// Tune separately on every repetition's dataset and report the tuned
    /// model, as the published protocol does.
    #[default]
    PerRepetition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentGrid {
    pub cells: Vec<Cell>,
    pub repetitions: usize,
    pub trials: usize,
    pub space: SearchSpace,
    #[serde(default)]
    pub tuning: TuningMode,
    pub noise_std: f64,
    pub n_test: usize,
}

impl ExperimentGrid {
    /// 5 repetitions × 100 trials over the given cells.
    pub fn desk(cells: Vec<Cell>) -> Self {
        Self {
            cells,
            repetitions: 5,
            trials: 100,
            space: SearchSpace::desk(),
            tuning: TuningMode::PerRepetition,
            noise_std: 0.5,
            n_test: 10_000,
        }
    }

    /// 25 repetitions × 500 trials over the published ranges.
    pub fn paper(cells: Vec<Cell>) -> Self {
        Self {
            repetitions: 25,
            trials: 500,
            space: SearchSpace::paper(),
            ..Self::desk(cells)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::Config("grid has no cells".into()));
        }
        if self.repetitions == 0 || self.trials == 0 {
            return Err(Error::Config("repetitions and trials must be at least 1".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) || self.n_test == 0 {
            return Err(Error::Config("noise std must be finite and non-negative, n_test positive".into()));
        }
        self.space.validate()
    }

    fn spec(&self, cell: &Cell, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            noise_std: self.noise_std,
            n_test: self.n_test,
            ..SyntheticSpec::new(cell.n, cell.p, cell.sigma, cell.k).with_seed(seed)
        }
    }
}

/// Outcome of one trained configuration on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub train_seed: u64,
    pub validation_mse: f64,
    pub test_mse: f64,
    pub selected: usize,
    pub f1: f64,
}

fn run_trial(ds: &Dataset, truth: &TrueSupport, tc: &TrialConfig, train_seed: u64) -> Result<RunOutcome> {
    let (ens, cfg) = tc.to_configs(ds.n_features(), 1, LossKind::LeastSquares, train_seed)?;
    let (model, _) = train(ds, &ens, &cfg)?;
    outcome(&model, ds, truth, train_seed)
}

fn outcome(model: &EnsembleModel, ds: &Dataset, truth: &TrueSupport, train_seed: u64) -> Result<RunOutcome> {
    let val = evaluate(model, ds, &ds.split.validation, LossKind::LeastSquares, Some(truth))?;
    let test = evaluate(model, ds, &ds.split.test, LossKind::LeastSquares, Some(truth))?;
    Ok(RunOutcome {
        train_seed,
        validation_mse: val.mse.unwrap_or(f64::NAN),
        test_mse: test.mse.unwrap_or(f64::NAN),
        selected: test.selected_features,
        f1: test.support_f1.unwrap_or(f64::NAN),
    })
}

/// Record of one tuning trial; `outcome` is `None` when training diverged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub config: TrialConfig,
    pub outcome: Option<RunOutcome>,
}

/// Random search on validation MSE. Diverged trials are kept in the log
/// and skipped; any other error aborts.
fn tune(
    ds: &Dataset,
    truth: &TrueSupport,
    space: &SearchSpace,
    trials: usize,
    draw_rng: &mut SeededRng,
    trial_seed: impl Fn(usize) -> u64,
) -> Result<(usize, Vec<TrialRecord>)> {
    let n_train = ds.split.train.len();
    let mut log = Vec::with_capacity(trials);
    let mut best: Option<(usize, f64)> = None;
    for i in 0..trials {
        let config = space.sample(draw_rng, n_train);
        let out = match run_trial(ds, truth, &config, trial_seed(i)) {
            Ok(o) => Some(o),
            Err(Error::Diverged { step, tensor }) => {
                warn!("trial {i} diverged at step {step} ({tensor}); skipped");
                None
            }
            Err(e) => return Err(e),
        };
        if let Some(o) = &out
            && o.validation_mse.is_finite()
            && best.is_none_or(|(_, b)| o.validation_mse < b)
        {
            best = Some((i, o.validation_mse));
        }
        log.push(TrialRecord { index: i, config, outcome: out });
    }
    let (idx, _) = best.ok_or_else(|| Error::Config("every tuning trial diverged".into()))?;
    Ok((idx, log))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepetitionResult {
    pub repetition: usize,
    pub data_seed: u64,
    pub config: TrialConfig,
    pub outcome: RunOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    pub row: RecoveryRow,
    /// The per-cell winner (PerCell mode) or the first repetition's winner.
    pub best_config: TrialConfig,
    pub repetitions: Vec<RepetitionResult>,
    pub trials: Vec<TrialRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub seed: u64,
    pub grid: ExperimentGrid,
    pub cells: Vec<CellResult>,
}

impl GridResult {
    pub fn rows(&self) -> Vec<RecoveryRow> {
        self.cells.iter().map(|c| c.row.clone()).collect()
    }
}

fn run_cell(grid: &ExperimentGrid, ci: usize, seed: u64) -> Result<CellResult> {
    let cell = grid.cells[ci];
    let c = ci as u64;
    let mut draw_rng = rng::child(seed, &[purpose::TUNE, c]);
    let mut reps = Vec::with_capacity(grid.repetitions);
    let mut trials_log = Vec::new();
    let mut best_config = None;

    if grid.tuning == TuningMode::PerCell {
        let data_seed = rng::derive_seed(seed, &[purpose::DATA, c, TUNING_DATASET]);
        let (ds, truth) = generate_synthetic(&grid.spec(&cell, data_seed))?;
        let (idx, log) = tune(&ds, &truth, &grid.space, grid.trials, &mut draw_rng, |i| {
            rng::derive_seed(seed, &[purpose::TRAIN, c, TUNING_DATASET, i as u64])
        })?;
        info!("{}: best trial {idx} {:?}", cell.label(), log[idx].config);
        best_config = Some(log[idx].config.clone());
        trials_log = log;
    }

    for r in 0..grid.repetitions {
        let data_seed = rng::derive_seed(seed, &[purpose::DATA, c, r as u64]);
        let (ds, truth) = generate_synthetic(&grid.spec(&cell, data_seed))?;
        let (config, outcome) = match grid.tuning {
            TuningMode::PerCell => {
                let cfg = best_config.clone().expect("tuned before repetitions");
                let train_seed = rng::derive_seed(seed, &[purpose::TRAIN, c, r as u64]);
                let out = run_trial(&ds, &truth, &cfg, train_seed)?;
                (cfg, out)
            }
            TuningMode::PerRepetition => {
                // The tuned model itself is the repetition's result.
                let (idx, log) = tune(&ds, &truth, &grid.space, grid.trials, &mut draw_rng, |i| {
                    rng::derive_seed(seed, &[purpose::TRAIN, c, r as u64, i as u64])
                })?;
                let cfg = log[idx].config.clone();
                let out = log[idx].outcome.clone().expect("best trial has an outcome");
                if r == 0 {
                    best_config = Some(cfg.clone());
                    trials_log = log;
                }
                (cfg, out)
            }
        };
        info!(
            "{} rep {r}: test mse {:.4}, {} features, f1 {:.3}",
            cell.label(),
            outcome.test_mse,
            outcome.selected,
            outcome.f1
        );
        reps.push(RepetitionResult { repetition: r, data_seed, config, outcome });
    }

    let col = |f: fn(&RunOutcome) -> f64| mean_se(&reps.iter().map(|r| f(&r.outcome)).collect::<Vec<_>>());
    let row = RecoveryRow {
        sigma: cell.sigma,
        p: cell.p,
        n: cell.n,
        repetitions: reps.len(),
        test_mse: col(|o| o.test_mse),
        features: col(|o| o.selected as f64),
        f1: col(|o| o.f1),
    };
    Ok(CellResult {
        cell,
        row,
        best_config: best_config.expect("at least one repetition"),
        repetitions: reps,
        trials: trials_log,
    })
}

/// Tunes and repeats every cell of the grid. A failing cell is reported
/// as [`Error::Cell`] carrying the cell label.
pub fn run_synthetic_grid(grid: &ExperimentGrid, seed: u64) -> Result<GridResult> {
    grid.validate()?;
    let mut cells = Vec::with_capacity(grid.cells.len());
    for ci in 0..grid.cells.len() {
        let res = run_cell(grid, ci, seed).map_err(|e| Error::Cell {
            cell: grid.cells[ci].label(),
            source: Box::new(e),
        })?;
        cells.push(res);
    }
    Ok(GridResult { seed, grid: grid.clone(), cells })
}

/// One arm's best qualifying trial for a budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub trial: usize,
    pub validation_metric: f64,
    pub test_metric: f64,
    pub selected: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub budget: usize,
    /// `None` when no trial met the budget.
    pub fixed: Option<ArmResult>,
    pub dsl: Option<ArmResult>,
}

/// Settings shared by both arms of [`run_dsl_ablation`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub budgets: Vec<usize>,
    pub trials: usize,
    pub space: SearchSpace,
    /// Range of the constant λ0 used by the fixed arm.
    pub fixed_lambda0: LogRange,
    pub loss: LossKind,
}

impl AblationConfig {
    pub fn desk(budgets: Vec<usize>, trials: usize) -> Self {
        let space = SearchSpace::desk();
        Self {
            budgets,
            trials,
            fixed_lambda0: LogRange::new(space.gamma.lo * 1e-2, space.gamma.hi),
            space,
            loss: LossKind::LeastSquares,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub seed: u64,
    /// `mse` (minimised) or `auc` (maximised).
    pub metric: String,
    pub rows: Vec<AblationRow>,
    pub fixed_trials: Vec<Trial<TrialConfig>>,
    pub dsl_trials: Vec<Trial<TrialConfig>>,
}

fn metric_of(model: &EnsembleModel, ds: &Dataset, rows: &[usize], loss: LossKind) -> Result<f64> {
    let r = evaluate(model, ds, rows, loss, None)?;
    r.mse.or(r.auc).ok_or_else(|| Error::Metric("no metric for this target".into()))
}

/// Paired random search: trial `i` of both arms shares every hyperparameter
/// except how λ0 is set — a constant drawn from `fixed_lambda0` for the fixed
/// arm, the scheduler for the DSL arm.
pub fn run_dsl_ablation(dataset: &Dataset, cfg: &AblationConfig, seed: u64) -> Result<AblationResult> {
    cfg.space.validate()?;
    cfg.fixed_lambda0.check("fixed lambda0")?;
    if cfg.trials == 0 || cfg.budgets.is_empty() {
        return Err(Error::Config("ablation needs at least one trial and one budget".into()));
    }
    if dataset.split.validation.is_empty() || dataset.split.test.is_empty() {
        return Err(Error::Data("ablation needs validation and test rows".into()));
    }
    let (direction, metric, outputs) = match (&dataset.y, cfg.loss) {
        (Targets::Regression(_), LossKind::LeastSquares) => (Direction::Minimize, "mse", 1),
        (Targets::Classes { .. }, LossKind::CrossEntropy) => {
            (Direction::Maximize, "auc", dataset.y.output_dim(cfg.loss))
        }
        _ => return Err(Error::Config("loss does not match the target type".into())),
    };
    let p = dataset.n_features();
    let mut draw_rng = rng::child(seed, &[purpose::TUNE]);
    let mut fixed_trials = Vec::new();
    let mut dsl_trials = Vec::new();
    let mut test = [Vec::new(), Vec::new()];

    for i in 0..cfg.trials {
        let tc = cfg.space.sample(&mut draw_rng, dataset.split.train.len());
        let lambda0 = cfg.fixed_lambda0.sample(&mut draw_rng);
        let train_seed = rng::derive_seed(seed, &[purpose::TRAIN, i as u64]);
        let (ens, dsl_cfg) = tc.to_configs(p, outputs, cfg.loss, train_seed)?;
        let fixed_cfg = TrainConfig { scheduler: None, lambda0, ..dsl_cfg.clone() };
        for (arm, tcfg) in [(0, &fixed_cfg), (1, &dsl_cfg)] {
            let (val, tst, sel) = match train(dataset, &ens, tcfg) {
                Ok((model, _)) => (
                    metric_of(&model, dataset, &dataset.split.validation, cfg.loss)?,
                    metric_of(&model, dataset, &dataset.split.test, cfg.loss)?,
                    model.selected_count(),
                ),
                Err(Error::Diverged { .. }) => (f64::NAN, f64::NAN, p),
                Err(e) => return Err(e),
            };
            let mut config = tc.clone();
            if arm == 0 {
                config.gamma = lambda0;
                config.temperature = 0.0;
            }
            let t = Trial { config, validation_metric: val, selected_count: sel };
            if arm == 0 { fixed_trials.push(t) } else { dsl_trials.push(t) }
            test[arm].push(tst);
        }
    }

    let pick = |trials: &[Trial<TrialConfig>], tests: &[f64], budget: usize| {
        select_within_budget(trials, budget, direction).ok().map(|best| {
            let idx = trials.iter().position(|t| std::ptr::eq(t, best)).expect("member");
            ArmResult {
                trial: idx,
                validation_metric: best.validation_metric,
                test_metric: tests[idx],
                selected: best.selected_count,
            }
        })
    };
    let rows = cfg
        .budgets
        .iter()
        .map(|&budget| AblationRow {
            budget,
            fixed: pick(&fixed_trials, &test[0], budget),
            dsl: pick(&dsl_trials, &test[1], budget),
        })
        .collect();
    Ok(AblationResult { seed, metric: metric.into(), rows, fixed_trials, dsl_trials })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub epoch: usize,
    pub validation_loss: Option<f64>,
    pub selected: usize,
    pub lambda0: f64,
}

pub fn record_trajectory(report: &TrainReport) -> Vec<TrajectoryPoint> {
    report
        .epochs
        .iter()
        .map(|e| TrajectoryPoint {
            epoch: e.epoch,
            validation_loss: e.validation_loss,
            selected: e.selected,
            lambda0: e.lambda0,
        })
        .collect()
}

/// Whether `selected` never increases once λ0 is within `rel` of its
/// final value.
pub fn tail_non_increasing(points: &[TrajectoryPoint], rel: f64) -> bool {
    let Some(last) = points.last() else { return true };
    let plateau = points.iter().position(|p| p.lambda0 >= last.lambda0 * (1.0 - rel)).unwrap_or(0);
    points[plateau..].windows(2).all(|w| w[1].selected <= w[0].selected)
}

pub fn trajectory_jsonl(points: &[TrajectoryPoint]) -> Result<String> {
    let mut out = String::new();
    for p in points {
        out.push_str(&serde_json::to_string(p)?);
        out.push('\n');
    }
    Ok(out)
}
