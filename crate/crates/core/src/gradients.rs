//! Hand-written backward pass through the tensor contraction.
//!
//! For a tree `j`, let `v_l = Σ_c g_c o_{l,c}` where `g` is the loss gradient
//! with respect to the ensemble output. The expected value below node `i`
//! obeys `V_i = S_i V_left + (1 − S_i) V_right`, so
//! `∂f/∂a_i = reach_i · (V_left − V_right) · S′(a_i)` and
//! `∂f/∂w_{k,i} = x_k · ∂f/∂a_i`. This avoids dividing reach probabilities
//! by activations that may be exactly zero.

use ndarray::{Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EnsembleModel, ForwardCache};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `(y − f)² / 2`, single output.
    LeastSquares,
    /// Sigmoid cross-entropy for one logit, softmax cross-entropy otherwise.
    CrossEntropy,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ls" | "least_squares" | "mse" => Ok(Self::LeastSquares),
            "xent" | "cross_entropy" => Ok(Self::CrossEntropy),
            other => Err(Error::Config(format!("unknown loss kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targets {
    Regression(Vec<f64>),
    Classes { labels: Vec<usize>, n_classes: usize },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Regression(y) => y.len(),
            Targets::Classes { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subset(&self, rows: &[usize]) -> Targets {
        match self {
            Targets::Regression(y) => Targets::Regression(rows.iter().map(|&i| y[i]).collect()),
            Targets::Classes { labels, n_classes } => Targets::Classes {
                labels: rows.iter().map(|&i| labels[i]).collect(),
                n_classes: *n_classes,
            },
        }
    }

    /// Output width a model needs for these targets under `loss`.
    pub fn output_dim(&self, loss: LossKind) -> usize {
        match (self, loss) {
            (Targets::Classes { n_classes: 2, .. }, LossKind::CrossEntropy) => 1,
            (Targets::Classes { n_classes, .. }, _) => *n_classes,
            (Targets::Regression(_), _) => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientPair {
    pub grad_w: Array3<f64>,
    pub grad_o: Array3<f64>,
    pub grad_bias: Option<Array2<f64>>,
}

impl GradientPair {
    fn zeros_like(model: &EnsembleModel) -> Self {
        Self {
            grad_w: Array3::zeros(model.hyperplanes.weights.raw_dim()),
            grad_o: Array3::zeros(model.leaves.values.raw_dim()),
            grad_bias: model
                .hyperplanes
                .biases
                .as_ref()
                .map(|b| Array2::zeros(b.raw_dim())),
        }
    }

    fn scale(&mut self, factor: f64) {
        self.grad_w.mapv_inplace(|v| v * factor);
        self.grad_o.mapv_inplace(|v| v * factor);
        if let Some(b) = self.grad_bias.as_mut() {
            b.mapv_inplace(|v| v * factor);
        }
    }
}

fn check_compatible(
    x: ArrayView2<'_, f64>,
    y: &Targets,
    model: &EnsembleModel,
    loss: LossKind,
) -> Result<()> {
    let cfg = &model.config;
    if x.ncols() != cfg.num_features {
        return Err(Error::Dimension {
            what: "design matrix columns",
            expected: cfg.num_features,
            got: x.ncols(),
        });
    }
    if y.len() != x.nrows() {
        return Err(Error::Dimension {
            what: "target count",
            expected: x.nrows(),
            got: y.len(),
        });
    }
    match (loss, y) {
        (LossKind::LeastSquares, Targets::Regression(_)) if cfg.num_outputs == 1 => Ok(()),
        (LossKind::LeastSquares, Targets::Regression(_)) => Err(Error::Config(format!(
            "least squares needs a single output, model has {}",
            cfg.num_outputs
        ))),
        (LossKind::LeastSquares, Targets::Classes { .. }) => Err(Error::Config(
            "least squares expects real-valued targets".into(),
        )),
        (LossKind::CrossEntropy, Targets::Regression(_)) => Err(Error::Config(
            "cross-entropy expects class labels".into(),
        )),
        (LossKind::CrossEntropy, Targets::Classes { labels, n_classes }) => {
            let c = cfg.num_outputs;
            let ok = if c == 1 { *n_classes == 2 } else { *n_classes == c };
            if !ok {
                return Err(Error::Config(format!(
                    "{n_classes} classes cannot be modelled with {c} outputs"
                )));
            }
            if let Some(bad) = labels.iter().find(|&&l| l >= *n_classes) {
                return Err(Error::Data(format!("label {bad} out of range")));
            }
            Ok(())
        }
    }
}

/// Per-sample loss and its gradient with respect to the output logits.
fn sample_loss(loss: LossKind, f: &[f64], y: &Targets, row: usize, grad: &mut [f64]) -> f64 {
    match (loss, y) {
        (LossKind::LeastSquares, Targets::Regression(t)) => {
            let r = f[0] - t[row];
            grad[0] = r;
            0.5 * r * r
        }
        (LossKind::CrossEntropy, Targets::Classes { labels, .. }) if f.len() == 1 => {
            let z = f[0];
            let t = labels[row] as f64;
            let sig = if z >= 0.0 {
                1.0 / (1.0 + (-z).exp())
            } else {
                let e = z.exp();
                e / (1.0 + e)
            };
            grad[0] = sig - t;
            z.max(0.0) + (-z.abs()).exp().ln_1p() - t * z
        }
        (LossKind::CrossEntropy, Targets::Classes { labels, .. }) => {
            let max = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (g, &z) in grad.iter_mut().zip(f) {
                *g = (z - max).exp();
                total += *g;
            }
            for g in grad.iter_mut() {
                *g /= total;
            }
            let label = labels[row];
            grad[label] -= 1.0;
            max + total.ln() - f[label]
        }
        _ => unreachable!("checked by check_compatible"),
    }
}

/// Reusable buffers for repeated backward passes.
pub(crate) struct Workspace {
    cache: ForwardCache,
    deriv: Vec<f64>,
    out_grad: Vec<f64>,
    delta: Vec<f64>,
    subtree: Vec<f64>,
    row: Vec<f64>,
}

impl Workspace {
    pub fn new(model: &EnsembleModel) -> Self {
        let cfg = &model.config;
        Self {
            cache: ForwardCache::new(cfg),
            deriv: vec![0.0; cfg.group_len()],
            out_grad: vec![0.0; cfg.num_outputs],
            delta: vec![0.0; cfg.group_len()],
            subtree: vec![0.0; cfg.nodes_per_tree()],
            row: vec![0.0; cfg.num_features],
        }
    }
}

fn row_slice<'a>(x: &'a ArrayView2<'_, f64>, n: usize, buf: &'a mut [f64]) -> &'a [f64] {
    let row = x.row(n);
    match row.to_slice() {
        Some(r) => r,
        None => {
            buf.iter_mut().zip(row.iter()).for_each(|(d, s)| *d = *s);
            buf
        }
    }
}

/// Mean loss and mean gradient over the rows listed in `rows`. Samples are
/// reduced in the order given, so repeated calls are bit-identical.
pub(crate) fn backward_rows(
    x: ArrayView2<'_, f64>,
    y: &Targets,
    rows: &[usize],
    model: &EnsembleModel,
    loss: LossKind,
    ws: &mut Workspace,
) -> Result<(f64, GradientPair)> {
    let cfg = &model.config;
    let (ni, nl, c, g) = (
        cfg.internal_nodes(),
        cfg.leaves(),
        cfg.num_outputs,
        cfg.group_len(),
    );
    let nodes = cfg.nodes_per_tree();
    let active = model.active_features();
    let o = model.leaves.flat();
    let mut grads = GradientPair::zeros_like(model);
    let mut total = 0.0;

    for &n in rows {
        let xr = row_slice(&x, n, &mut ws.row);
        if xr.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample { tensor: "input", sample: n });
        }
        model.forward_into(xr, active.iter().copied(), &mut ws.cache);
        let l = sample_loss(loss, &ws.cache.output, y, n, &mut ws.out_grad);
        if !l.is_finite() || ws.out_grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample { tensor: "loss", sample: n });
        }
        total += l;
        model.activation_derivatives(&ws.cache, &mut ws.deriv);

        let go = grads.grad_o.as_slice_mut().expect("standard layout");
        for j in 0..cfg.num_trees {
            let reach = &ws.cache.reach[j * nodes..(j + 1) * nodes];
            let act = &ws.cache.act[j * ni..(j + 1) * ni];
            let deriv = &ws.deriv[j * ni..(j + 1) * ni];
            let sub = &mut ws.subtree;
            sub[ni..].fill(0.0);
            for (ci, &gc) in ws.out_grad.iter().enumerate() {
                let base = (j * c + ci) * nl;
                let orow = &o[base..base + nl];
                let grow = &mut go[base..base + nl];
                for l in 0..nl {
                    grow[l] += gc * reach[ni + l];
                    sub[ni + l] += gc * orow[l];
                }
            }
            for i in (0..ni).rev() {
                let (left, right) = (sub[2 * i + 1], sub[2 * i + 2]);
                sub[i] = act[i] * left + (1.0 - act[i]) * right;
                ws.delta[j * ni + i] = reach[i] * (left - right) * deriv[i];
            }
        }

        if let Some(gb) = grads.grad_bias.as_mut() {
            gb.iter_mut().zip(&ws.delta).for_each(|(b, d)| *b += d);
        }
        let gw = grads.grad_w.as_slice_mut().expect("standard layout");
        for (k, &xk) in xr.iter().enumerate() {
            let block = &mut gw[k * g..(k + 1) * g];
            for (w, d) in block.iter_mut().zip(&ws.delta) {
                *w += xk * d;
            }
        }
    }

    let inv = 1.0 / rows.len() as f64;
    grads.scale(inv);
    Ok((total * inv, grads))
}

/// Mean batch loss and its exact gradient with respect to every model
/// parameter. The ridge term is not included.
pub fn backward(
    x: ArrayView2<'_, f64>,
    y: &Targets,
    model: &EnsembleModel,
    loss: LossKind,
) -> Result<(f64, GradientPair)> {
    check_compatible(x, y, model, loss)?;
    if x.nrows() == 0 {
        return Err(Error::Data("backward needs at least one sample".into()));
    }
    let rows: Vec<usize> = (0..x.nrows()).collect();
    let mut ws = Workspace::new(model);
    backward_rows(x, y, &rows, model, loss, &mut ws)
}

pub(crate) fn loss_rows(
    x: ArrayView2<'_, f64>,
    y: &Targets,
    rows: &[usize],
    model: &EnsembleModel,
    loss: LossKind,
) -> Result<f64> {
    let mut cache = ForwardCache::new(&model.config);
    let mut grad = vec![0.0; model.config.num_outputs];
    let mut buf = vec![0.0; model.config.num_features];
    let active = model.active_features();
    let mut total = 0.0;
    for &n in rows {
        let xr = row_slice(&x, n, &mut buf);
        model.forward_into(xr, active.iter().copied(), &mut cache);
        total += sample_loss(loss, &cache.output, y, n, &mut grad);
    }
    Ok(total / rows.len() as f64)
}

/// Mean loss over all rows of `x`.
pub fn loss_value(
    x: ArrayView2<'_, f64>,
    y: &Targets,
    model: &EnsembleModel,
    loss: LossKind,
) -> Result<f64> {
    check_compatible(x, y, model, loss)?;
    if x.nrows() == 0 {
        return Err(Error::Data("loss needs at least one sample".into()));
    }
    if let Some(bad) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("design matrix entry {bad}")));
    }
    let rows: Vec<usize> = (0..x.nrows()).collect();
    loss_rows(x, y, &rows, model, loss)
}

pub(crate) fn validate_batch(
    x: ArrayView2<'_, f64>,
    y: &Targets,
    model: &EnsembleModel,
    loss: LossKind,
) -> Result<()> {
    check_compatible(x, y, model, loss)
}
