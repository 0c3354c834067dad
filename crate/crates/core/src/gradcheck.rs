//! Finite-difference verification of the analytic backward pass.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gradients::{LossKind, Targets, backward, loss_value};
use crate::model::{EnsembleConfig, EnsembleModel};
use crate::rng;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub instances: usize,
    pub max_trees: usize,
    pub max_depth: usize,
    pub max_features: usize,
    pub max_batch: usize,
    pub step: f64,
    pub rel_tol: f64,
    pub abs_floor: f64,
    /// Pre-activations closer than this to `±θ` cause the instance to be redrawn.
    pub knot_margin: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            instances: 200,
            max_trees: 4,
            max_depth: 3,
            max_features: 10,
            max_batch: 8,
            step: 1e-5,
            rel_tol: 1e-5,
            abs_floor: 1e-8,
            knot_margin: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub instances: usize,
    pub least_squares_instances: usize,
    pub cross_entropy_instances: usize,
    pub coordinates: usize,
    pub max_rel_err_w: f64,
    pub max_rel_err_o: f64,
    pub max_rel_err_bias: f64,
    pub max_abs_err: f64,
    /// Relative error without the absolute floor, over gradients ≥ 1e-3.
    pub max_rel_err_raw: f64,
    pub failures: usize,
    pub passed: bool,
}

/// One randomly drawn model, batch, and targets.
#[derive(Clone, Debug)]
pub struct GradcheckInstance {
    pub model: EnsembleModel,
    pub x: Array2<f64>,
    pub y: Targets,
    pub loss: LossKind,
}

/// Whether any pre-activation of any row lies within `margin` of `±θ`.
pub fn near_knot(model: &EnsembleModel, x: &Array2<f64>, margin: f64) -> bool {
    let cfg = &model.config;
    let theta = cfg.activation_threshold;
    for row in x.outer_iter() {
        for j in 0..cfg.num_trees {
            for i in 0..cfg.internal_nodes() {
                let mut a: f64 = (0..cfg.num_features)
                    .map(|k| model.hyperplanes.weights[[k, j, i]] * row[k])
                    .sum();
                if let Some(b) = &model.hyperplanes.biases {
                    a += b[[j, i]];
                }
                if (a.abs() - theta).abs() < margin {
                    return true;
                }
            }
        }
    }
    false
}

pub fn random_instance<R: Rng>(cfg: &GradcheckConfig, loss: LossKind, rng: &mut R) -> GradcheckInstance {
    loop {
        let m = rng.random_range(1..=cfg.max_trees);
        let d = rng.random_range(1..=cfg.max_depth);
        let p = rng.random_range(1..=cfg.max_features);
        let b = rng.random_range(1..=cfg.max_batch);
        let c = match loss {
            LossKind::LeastSquares => 1,
            LossKind::CrossEntropy => rng.random_range(1..=3),
        };
        let theta = rng.random_range(0.5..1.5);
        let bias = rng.random_bool(0.5);
        let ens = EnsembleConfig::new(m, d, p, c)
            .with_threshold(theta)
            .with_bias(bias);
        let mut model = EnsembleModel::zeros(ens).expect("valid random config");
        // Wide enough that some nodes saturate and others do not.
        let wscale = 1.5 / (p as f64).sqrt();
        model
            .hyperplanes
            .weights
            .mapv_inplace(|_| rng.random_range(-wscale..wscale));
        if let Some(bs) = model.hyperplanes.biases.as_mut() {
            bs.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        model
            .leaves
            .values
            .mapv_inplace(|_| rng.random_range(-2.0..2.0));
        let x = Array2::from_shape_fn((b, p), |_| rng.random_range(-1.5..1.5));
        if near_knot(&model, &x, cfg.knot_margin) {
            continue;
        }
        let y = match loss {
            LossKind::LeastSquares => {
                Targets::Regression((0..b).map(|_| rng.random_range(-2.0..2.0)).collect())
            }
            LossKind::CrossEntropy => {
                let n_classes = if c == 1 { 2 } else { c };
                Targets::Classes {
                    labels: (0..b).map(|_| rng.random_range(0..n_classes)).collect(),
                    n_classes,
                }
            }
        };
        return GradcheckInstance { model, x, y, loss };
    }
}

/// Comparison summary for one tensor. `max_rel` only counts coordinates
/// whose absolute difference exceeds the floor; `max_rel_raw` covers every
/// coordinate with a gradient of magnitude at least 1e-3.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub max_rel: f64,
    pub max_abs: f64,
    pub max_rel_raw: f64,
    pub failures: usize,
    pub coords: usize,
}

/// Gradients smaller than this are left out of the unfloored relative error.
const RAW_REL_MIN: f64 = 1e-3;

fn compare(analytic: f64, numeric: f64, cfg: &GradcheckConfig, tally: &mut TensorCheck) {
    tally.coords += 1;
    let diff = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    tally.max_abs = tally.max_abs.max(diff);
    if scale >= RAW_REL_MIN {
        tally.max_rel_raw = tally.max_rel_raw.max(diff / scale);
    }
    if diff <= cfg.abs_floor {
        return;
    }
    let rel = diff / scale;
    tally.max_rel = tally.max_rel.max(rel);
    if rel > cfg.rel_tol {
        tally.failures += 1;
    }
}

/// Checks every gradient coordinate of one instance by central differences.
pub fn check_instance(inst: &GradcheckInstance, cfg: &GradcheckConfig) -> Result<[TensorCheck; 3]> {
    let (_, grads) = backward(inst.x.view(), &inst.y, &inst.model, inst.loss)?;
    let h = cfg.step;
    let eval = |m: &EnsembleModel| loss_value(inst.x.view(), &inst.y, m, inst.loss);
    let mut probe = inst.model.clone();

    let mut w = TensorCheck::default();
    for (idx, &analytic) in grads.grad_w.indexed_iter() {
        let orig = probe.hyperplanes.weights[idx];
        probe.hyperplanes.weights[idx] = orig + h;
        let up = eval(&probe)?;
        probe.hyperplanes.weights[idx] = orig - h;
        let down = eval(&probe)?;
        probe.hyperplanes.weights[idx] = orig;
        compare(analytic, (up - down) / (2.0 * h), cfg, &mut w);
    }

    let mut o = TensorCheck::default();
    for (idx, &analytic) in grads.grad_o.indexed_iter() {
        let orig = probe.leaves.values[idx];
        probe.leaves.values[idx] = orig + h;
        let up = eval(&probe)?;
        probe.leaves.values[idx] = orig - h;
        let down = eval(&probe)?;
        probe.leaves.values[idx] = orig;
        compare(analytic, (up - down) / (2.0 * h), cfg, &mut o);
    }

    let mut b = TensorCheck::default();
    if let Some(gb) = &grads.grad_bias {
        for (idx, &analytic) in gb.indexed_iter() {
            let biases = probe.hyperplanes.biases.as_mut().expect("bias present");
            let orig = biases[idx];
            biases[idx] = orig + h;
            let up = eval(&probe)?;
            let biases = probe.hyperplanes.biases.as_mut().expect("bias present");
            biases[idx] = orig - h;
            let down = eval(&probe)?;
            probe.hyperplanes.biases.as_mut().expect("bias present")[idx] = orig;
            compare(analytic, (up - down) / (2.0 * h), cfg, &mut b);
        }
    }
    Ok([w, o, b])
}

/// Runs the suite over `cfg.instances` random instances, alternating losses.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = rng::seeded(cfg.seed);
    let mut report = GradcheckReport::default();
    for n in 0..cfg.instances {
        let loss = if n % 2 == 0 {
            LossKind::LeastSquares
        } else {
            LossKind::CrossEntropy
        };
        let inst = random_instance(cfg, loss, &mut rng);
        let [w, o, b] = check_instance(&inst, cfg)?;
        report.max_rel_err_w = report.max_rel_err_w.max(w.max_rel);
        report.max_rel_err_o = report.max_rel_err_o.max(o.max_rel);
        report.max_rel_err_bias = report.max_rel_err_bias.max(b.max_rel);
        for t in [w, o, b] {
            report.max_abs_err = report.max_abs_err.max(t.max_abs);
            report.max_rel_err_raw = report.max_rel_err_raw.max(t.max_rel_raw);
            report.failures += t.failures;
            report.coordinates += t.coords;
        }
        match loss {
            LossKind::LeastSquares => report.least_squares_instances += 1,
            LossKind::CrossEntropy => report.cross_entropy_instances += 1,
        }
        report.instances += 1;
    }
    report.passed = report.failures == 0;
    Ok(report)
}
