//! Empirical descent certificate for full-batch proximal gradient descent
//! with least squares and `λ2 > 0`.
//!
//! The harness runs a fixed number of full-batch steps at constant `λ0`,
//! records the objective after every step, and halves the learning rate
//! and restarts from the initial model whenever the objective increases.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradients::{LossKind, Targets, loss_rows, validate_batch};
use crate::model::{EnsembleModel, l2_norm};
use crate::train::{PenaltyMode, ProxStepper, TrainConfig, penalty_value};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateConfig {
    pub steps: usize,
    pub max_halvings: usize,
    /// Allowed increase, relative to `max(1, |objective|)`, before a step
    /// counts as a violation.
    pub tolerance: f64,
    /// Leaf ball radius used when the training config does not set one.
    pub default_leaf_bound: f64,
}

impl Default for CertificateConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            max_halvings: 20,
            tolerance: 1e-10,
            default_leaf_bound: 100.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescentAttempt {
    pub learning_rate: f64,
    pub violations: usize,
    pub first_violation: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescentCertificate {
    pub certified: bool,
    pub learning_rate: f64,
    pub attempts: Vec<DescentAttempt>,
    pub steps: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub max_objective_increase: f64,
    pub max_w_norm: f64,
    /// `√(c₀ · m|I| / λ2)`.
    pub w_norm_bound: f64,
    pub bounded: bool,
    pub objectives: Vec<f64>,
    pub w_norms: Vec<f64>,
}

struct Run {
    objectives: Vec<f64>,
    w_norms: Vec<f64>,
    violations: usize,
    first_violation: Option<usize>,
    max_increase: f64,
}

fn objective(
    model: &EnsembleModel,
    x: ArrayView2<'_, f64>,
    y: &Targets,
    rows: &[usize],
    cfg: &TrainConfig,
) -> Result<f64> {
    Ok(loss_rows(x, y, rows, model, cfg.loss)? + penalty_value(model, cfg, cfg.lambda0))
}

fn run_once(
    initial: &EnsembleModel,
    x: ArrayView2<'_, f64>,
    y: &Targets,
    rows: &[usize],
    cfg: &TrainConfig,
    cert: &CertificateConfig,
) -> Result<Run> {
    let mut model = initial.clone();
    let mut stepper = ProxStepper::new(&model, cfg);
    let mut prev = objective(&model, x, y, rows, cfg)?;
    let mut run = Run {
        objectives: vec![prev],
        w_norms: vec![l2_norm(model.hyperplanes.flat())],
        violations: 0,
        first_violation: None,
        max_increase: f64::NEG_INFINITY,
    };
    for t in 0..cert.steps {
        match stepper.step(&mut model, x, y, rows, cfg.lambda0) {
            Ok(_) => {}
            Err(Error::Diverged { .. }) => {
                run.violations += 1;
                run.first_violation.get_or_insert(t);
                run.max_increase = f64::INFINITY;
                break;
            }
            Err(e) => return Err(e),
        }
        let obj = objective(&model, x, y, rows, cfg)?;
        let increase = obj - prev;
        run.max_increase = run.max_increase.max(increase);
        if !obj.is_finite() || increase > cert.tolerance * prev.abs().max(1.0) {
            run.violations += 1;
            run.first_violation.get_or_insert(t);
        }
        run.objectives.push(obj);
        run.w_norms.push(l2_norm(model.hyperplanes.flat()));
        prev = obj;
    }
    Ok(run)
}

/// Searches for a learning rate (starting from `cfg.learning_rate` and
/// halving) under which every full-batch step on `rows` is non-increasing.
pub fn descent_certificate(
    x: ArrayView2<'_, f64>,
    y: &Targets,
    rows: &[usize],
    model: &EnsembleModel,
    cfg: &TrainConfig,
    cert: &CertificateConfig,
) -> Result<DescentCertificate> {
    cfg.validate()?;
    validate_batch(x, y, model, cfg.loss)?;
    if cfg.loss != LossKind::LeastSquares {
        return Err(Error::Config("the descent certificate needs least squares".into()));
    }
    if !(cfg.lambda2 > 0.0) {
        return Err(Error::Config("the descent certificate needs lambda2 > 0".into()));
    }
    if cfg.penalty != PenaltyMode::GroupL0L2 {
        return Err(Error::Config("the descent certificate covers group_l0_l2 only".into()));
    }
    if rows.is_empty() {
        return Err(Error::Data("no rows to certify on".into()));
    }

    let mut cfg = TrainConfig {
        scheduler: None,
        batch_size: rows.len(),
        ..cfg.clone()
    };
    cfg.leaf_projection_bound.get_or_insert(cert.default_leaf_bound);

    let mut attempts = Vec::new();
    let mut last = None;
    for _ in 0..=cert.max_halvings {
        let run = run_once(model, x, y, rows, &cfg, cert)?;
        attempts.push(DescentAttempt {
            learning_rate: cfg.learning_rate,
            violations: run.violations,
            first_violation: run.first_violation,
        });
        let ok = run.violations == 0;
        last = Some(run);
        if ok {
            break;
        }
        cfg.learning_rate /= 2.0;
    }
    let run = last.expect("at least one attempt");
    let certified = run.violations == 0;
    let c0 = run.objectives[0];
    let g = model.config.group_len() as f64;
    let bound = (c0 * g / cfg.lambda2).sqrt();
    let max_w = run.w_norms.iter().copied().fold(0.0, f64::max);
    Ok(DescentCertificate {
        certified,
        learning_rate: attempts.last().expect("attempt").learning_rate,
        attempts,
        steps: run.objectives.len() - 1,
        initial_objective: c0,
        final_objective: *run.objectives.last().expect("objective"),
        max_objective_increase: run.max_increase,
        max_w_norm: max_w,
        w_norm_bound: bound,
        bounded: max_w <= bound,
        objectives: run.objectives,
        w_norms: run.w_norms,
    })
}
