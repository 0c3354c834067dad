//! Evaluation metrics and budgeted model selection.

use std::io::Write;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TrueSupport};
use crate::error::{Error, Result};
use crate::gradients::{LossKind, Targets};
use crate::model::{EnsembleModel, SupportMask};

/// Mean of squared residuals (no ½ factor, unlike the training loss).
pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Dimension {
            what: "prediction count",
            expected: truth.len(),
            got: pred.len(),
        });
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64)
}

/// F1 of the estimated feature set against the true support; 0 when the
/// estimate is empty.
pub fn support_f1(estimated: &SupportMask, truth: &TrueSupport) -> Result<f64> {
    if estimated.len() != truth.num_features {
        return Err(Error::Dimension {
            what: "support mask length",
            expected: truth.num_features,
            got: estimated.len(),
        });
    }
    let est = estimated.count();
    if est == 0 || truth.indices.is_empty() {
        return Ok(0.0);
    }
    let hits = truth.indices.iter().filter(|&&k| estimated.selected[k]).count();
    if hits == 0 {
        return Ok(0.0);
    }
    let precision = hits as f64 / est as f64;
    let recall = hits as f64 / truth.indices.len() as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Binary ROC AUC in Mann–Whitney form: the probability that a random
/// positive outscores a random negative, ties counted one half. Uses
/// midranks after one sort.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            what: "label count",
            expected: scores.len(),
            got: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Metric(format!("score {i} is NaN")));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("AUC needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * mid;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Macro-averaged one-vs-rest AUC over `n_classes` score columns.
pub fn auc_multiclass(scores: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    let c = scores.ncols();
    let mut total = 0.0;
    for class in 0..c {
        let col: Vec<f64> = scores.column(class).to_vec();
        let bin: Vec<bool> = labels.iter().map(|&l| l == class).collect();
        total += auc(&col, &bin).map_err(|e| Error::Metric(format!("class {class}: {e}")))?;
    }
    Ok(total / c as f64)
}

/// `p / max(1, selected)`.
pub fn compression_ratio(model: &EnsembleModel) -> f64 {
    model.config.num_features as f64 / model.selected_count().max(1) as f64
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    pub selected_features: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub support_f1: Option<f64>,
    pub compression_ratio: f64,
    pub sparse_parameters: usize,
}

/// Evaluates `model` on `rows` of the dataset with the sparse inference path.
pub fn evaluate(
    model: &EnsembleModel,
    ds: &Dataset,
    rows: &[usize],
    loss: LossKind,
    truth: Option<&TrueSupport>,
) -> Result<EvalReport> {
    if rows.is_empty() {
        return Err(Error::Data("no rows to evaluate".into()));
    }
    let (x, y) = ds.rows(rows);
    let mask = model.support_mask();
    let pred = model.predict_batch(x.view(), Some(&mask))?;
    let mut report = EvalReport {
        n_samples: rows.len(),
        selected_features: mask.count(),
        compression_ratio: compression_ratio(model),
        sparse_parameters: model.sparse_parameter_count(),
        support_f1: truth.map(|t| support_f1(&mask, t)).transpose()?,
        ..Default::default()
    };
    match (&y, loss) {
        (Targets::Regression(t), _) => {
            report.mse = Some(mse(&pred.column(0).to_vec(), t)?);
        }
        (Targets::Classes { labels, .. }, LossKind::CrossEntropy) if pred.ncols() == 1 => {
            let bin: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
            report.auc = Some(auc(&pred.column(0).to_vec(), &bin)?);
        }
        (Targets::Classes { labels, .. }, _) => {
            report.auc = Some(auc_multiclass(pred.view(), labels)?);
        }
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Minimize,
    Maximize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial<C> {
    pub config: C,
    pub validation_metric: f64,
    pub selected_count: usize,
}

/// Best trial among those selecting at most `budget` features.
pub fn select_within_budget<C>(
    trials: &[Trial<C>],
    budget: usize,
    direction: Direction,
) -> Result<&Trial<C>> {
    if trials.is_empty() {
        return Err(Error::Metric("no trials to select from".into()));
    }
    let better = |a: f64, b: f64| match direction {
        Direction::Minimize => a < b,
        Direction::Maximize => a > b,
    };
    let mut best: Option<&Trial<C>> = None;
    for t in trials.iter().filter(|t| t.selected_count <= budget) {
        if t.validation_metric.is_nan() {
            continue;
        }
        if best.is_none_or(|b| better(t.validation_metric, b.validation_metric)) {
            best = Some(t);
        }
    }
    best.ok_or_else(|| Error::Budget {
        budget,
        smallest: trials.iter().map(|t| t.selected_count).min().unwrap_or(0),
    })
}

/// Mean and standard error (`sample std / √n`).
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One row of the synthetic recovery table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub sigma: f64,
    pub p: usize,
    pub n: usize,
    pub repetitions: usize,
    pub test_mse: (f64, f64),
    pub features: (f64, f64),
    pub f1: (f64, f64),
}

pub fn write_recovery_csv<W: Write>(rows: &[RecoveryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "sigma", "p", "N", "R", "test_mse", "test_mse_se", "features", "features_se", "f1", "f1_se",
    ])?;
    for r in rows {
        w.write_record([
            r.sigma.to_string(),
            r.p.to_string(),
            r.n.to_string(),
            r.repetitions.to_string(),
            format!("{:.4}", r.test_mse.0),
            format!("{:.4}", r.test_mse.1),
            format!("{:.2}", r.features.0),
            format!("{:.2}", r.features.1),
            format!("{:.4}", r.f1.0),
            format!("{:.4}", r.f1.1),
        ])?;
    }
    w.flush()?;
    Ok(())
}
