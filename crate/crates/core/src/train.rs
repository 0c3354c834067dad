//! Proximal mini-batch gradient descent.
//!
//! Each step takes a plain gradient step on the leaves (and biases), a
//! gradient step on the hyperplanes for the smooth part
//! `batch loss + (λ2/m|I|)‖W‖²`, and then applies the group prox of the
//! active penalty to the hyperplanes.

use std::time::Instant;

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gradients::{LossKind, Targets, Workspace, backward_rows, loss_rows, validate_batch};
use crate::model::{EnsembleConfig, EnsembleModel, l2_norm};
use crate::prox::{
    group_l0_penalty, group_lasso_penalty, hard_threshold_in_place, ridge_penalty,
    soft_threshold_in_place,
};
use crate::rng::{self, purpose};
use crate::schedule::SchedulerConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyMode {
    /// Group ℓ0 prox plus ridge on the hyperplanes.
    GroupL0L2,
    /// Group soft-threshold prox, no ridge.
    GroupLasso,
    /// Ridge only.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda0: f64,
    pub lambda2: f64,
    pub lambda1: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub penalty: PenaltyMode,
    /// When set, replaces the constant `lambda0`.
    pub scheduler: Option<SchedulerConfig>,
    pub seed: u64,
    pub loss: LossKind,
    /// Radius of the Euclidean ball the leaf tensor is projected onto.
    pub leaf_projection_bound: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda0: 0.0,
            lambda2: 0.0,
            lambda1: 0.0,
            learning_rate: 0.01,
            batch_size: 64,
            epochs: 10,
            penalty: PenaltyMode::GroupL0L2,
            scheduler: None,
            seed: 0,
            loss: LossKind::LeastSquares,
            leaf_projection_bound: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("lambda0", self.lambda0),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if let Some(s) = &self.scheduler {
            s.validate()?;
            if self.penalty != PenaltyMode::GroupL0L2 {
                return Err(Error::Config(
                    "the lambda0 scheduler only applies to the group_l0_l2 penalty".into(),
                ));
            }
        }
        if let Some(b) = self.leaf_projection_bound {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::Config(format!("leaf_projection_bound must be > 0, got {b}")));
            }
        }
        Ok(())
    }

    /// Group-ℓ0 strength in force at mini-batch step `t`.
    pub fn lambda0_at(&self, step: u64) -> f64 {
        match (&self.penalty, &self.scheduler) {
            (PenaltyMode::GroupL0L2, Some(s)) => s.lambda0(step),
            (PenaltyMode::GroupL0L2, None) => self.lambda0,
            _ => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub objective: f64,
    pub data_loss: f64,
    pub penalty: f64,
    pub selected: usize,
    pub lambda0: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub epochs_run: usize,
    pub steps: u64,
    pub wall_time_secs: f64,
}

impl TrainReport {
    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for rec in &self.epochs {
            out.push_str(&serde_json::to_string(rec)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Regularisation part of the objective at strength `lambda0`.
pub fn penalty_value(model: &EnsembleModel, cfg: &TrainConfig, lambda0: f64) -> f64 {
    let w = model.hyperplanes.flat();
    let g = model.config.group_len();
    match cfg.penalty {
        PenaltyMode::GroupL0L2 => group_l0_penalty(w, g, lambda0) + ridge_penalty(w, g, cfg.lambda2),
        PenaltyMode::GroupLasso => group_lasso_penalty(w, g, cfg.lambda1),
        PenaltyMode::None => ridge_penalty(w, g, cfg.lambda2),
    }
}

/// Applies single proximal gradient steps to a model it borrows mutably.
pub(crate) struct ProxStepper<'c> {
    cfg: &'c TrainConfig,
    ws: Workspace,
    pub step: u64,
}

impl<'c> ProxStepper<'c> {
    pub fn new(model: &EnsembleModel, cfg: &'c TrainConfig) -> Self {
        Self {
            cfg,
            ws: Workspace::new(model),
            step: 0,
        }
    }

    /// One update on `rows` at the step's own `λ0`. Returns the batch loss
    /// evaluated before the update.
    pub fn step(
        &mut self,
        model: &mut EnsembleModel,
        x: ArrayView2<'_, f64>,
        y: &Targets,
        rows: &[usize],
        lambda0: f64,
    ) -> Result<f64> {
        let cfg = self.cfg;
        let eta = cfg.learning_rate;
        let step_idx = self.step as usize;
        let (loss, mut grads) = backward_rows(x, y, rows, model, cfg.loss, &mut self.ws)
            .map_err(|e| match e {
                Error::NonFiniteSample { tensor, .. } => Error::Diverged { step: step_idx, tensor },
                other => other,
            })?;
        let g = model.config.group_len();

        let leaves = model.leaves.flat_mut();
        let go = grads.grad_o.as_slice().expect("standard layout");
        leaves.iter_mut().zip(go).for_each(|(o, d)| *o -= eta * d);
        if let Some(bound) = cfg.leaf_projection_bound {
            let norm = l2_norm(leaves);
            if norm > bound {
                let s = bound / norm;
                leaves.iter_mut().for_each(|o| *o *= s);
            }
        }
        if let (Some(b), Some(gb)) = (model.hyperplanes.biases.as_mut(), grads.grad_bias.as_ref()) {
            b.scaled_add(-eta, gb);
        }

        let ridge = match cfg.penalty {
            PenaltyMode::GroupLasso => 0.0,
            _ => 2.0 * cfg.lambda2 / g as f64,
        };
        let gw = grads.grad_w.as_slice_mut().expect("standard layout");
        let w = model.hyperplanes.flat_mut();
        for (wi, d) in w.iter_mut().zip(gw.iter()) {
            *wi -= eta * (d + ridge * *wi);
        }
        match cfg.penalty {
            PenaltyMode::GroupL0L2 => {
                hard_threshold_in_place(w, g, eta, lambda0);
            }
            PenaltyMode::GroupLasso => {
                soft_threshold_in_place(w, g, eta, cfg.lambda1);
            }
            PenaltyMode::None => {}
        }

        if !model.hyperplanes.flat().iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { step: step_idx, tensor: "hyperplanes" });
        }
        if !model.leaves.flat().iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { step: step_idx, tensor: "leaves" });
        }
        self.step += 1;
        Ok(loss)
    }
}

/// Trains on `rows` of `(x, y)` starting from `model`. Validation loss is
/// recorded per epoch when `validation` is nonempty.
pub fn fit(
    model: &mut EnsembleModel,
    x: ArrayView2<'_, f64>,
    y: &Targets,
    rows: &[usize],
    validation: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    validate_batch(x, y, model, cfg.loss)?;
    if rows.is_empty() {
        return Err(Error::Data("no training rows".into()));
    }
    if cfg.batch_size > rows.len() {
        return Err(Error::Config(format!(
            "batch_size {} exceeds training rows {}",
            cfg.batch_size,
            rows.len()
        )));
    }
    if let Some(bad) = rows.iter().chain(validation).find(|&&i| i >= x.nrows()) {
        return Err(Error::Data(format!("row index {bad} out of range")));
    }
    if let Some(bad) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("design matrix entry {bad}")));
    }

    let start = Instant::now();
    let mut shuffle_rng = rng::child(cfg.seed, &[purpose::SHUFFLE]);
    let mut order = rows.to_vec();
    let mut stepper = ProxStepper::new(model, cfg);
    let mut report = TrainReport::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            let lambda0 = cfg.lambda0_at(stepper.step);
            stepper.step(model, x, y, batch, lambda0)?;
        }
        let lambda0 = cfg.lambda0_at(stepper.step.saturating_sub(1));
        let data_loss = loss_rows(x, y, rows, model, cfg.loss)?;
        let penalty = penalty_value(model, cfg, lambda0);
        let objective = data_loss + penalty;
        if !objective.is_finite() {
            return Err(Error::Diverged {
                step: stepper.step as usize,
                tensor: "objective",
            });
        }
        let validation_loss = if validation.is_empty() {
            None
        } else {
            Some(loss_rows(x, y, validation, model, cfg.loss)?)
        };
        report.epochs.push(EpochRecord {
            epoch: epoch + 1,
            objective,
            data_loss,
            penalty,
            selected: model.selected_count(),
            lambda0,
            validation_loss,
        });
    }
    report.epochs_run = cfg.epochs;
    report.steps = stepper.step;
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Initialises a model from `ens` and the seed and trains it on the
/// dataset's training split.
pub fn train(
    dataset: &Dataset,
    ens: &EnsembleConfig,
    cfg: &TrainConfig,
) -> Result<(EnsembleModel, TrainReport)> {
    if ens.num_features != dataset.n_features() {
        return Err(Error::Dimension {
            what: "ensemble feature count",
            expected: dataset.n_features(),
            got: ens.num_features,
        });
    }
    let mut init_rng = rng::child(cfg.seed, &[purpose::INIT]);
    let mut model = EnsembleModel::init(ens.clone(), &mut init_rng)?;
    let report = fit(
        &mut model,
        dataset.x.view(),
        &dataset.y,
        &dataset.split.train,
        &dataset.split.validation,
        cfg,
    )?;
    Ok((model, report))
}
