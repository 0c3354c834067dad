//! Group proximal operators acting on feature slices of the hyperplane
//! tensor. Both run one pass over the `p·m·|I|` weights.

use ndarray::Array3;

use crate::model::l2_norm;

/// Group-ℓ0 hard threshold: a feature slice is kept verbatim when its norm is
/// at least `√(2ηλ0)` and replaced by exact zeros otherwise. Returns the
/// number of groups kept.
pub fn hard_threshold_in_place(flat: &mut [f64], group_len: usize, eta: f64, lambda0: f64) -> usize {
    let threshold = (2.0 * eta * lambda0).sqrt();
    let mut kept = 0;
    for group in flat.chunks_exact_mut(group_len) {
        if l2_norm(group) >= threshold {
            if group.iter().any(|&v| v != 0.0) {
                kept += 1;
            }
        } else {
            group.fill(0.0);
        }
    }
    kept
}

/// Group soft threshold with `τ = ηλ1 / √(m|I|)`: a slice with norm `≥ τ` is
/// shrunk by the factor `1 − τ/‖Z_k‖`, any other slice becomes zero.
pub fn soft_threshold_in_place(flat: &mut [f64], group_len: usize, eta: f64, lambda1: f64) -> usize {
    let tau = eta * lambda1 / (group_len as f64).sqrt();
    let mut kept = 0;
    for group in flat.chunks_exact_mut(group_len) {
        let norm = l2_norm(group);
        if norm >= tau && norm > 0.0 {
            let factor = 1.0 - tau / norm;
            group.iter_mut().for_each(|v| *v *= factor);
            if group.iter().any(|&v| v != 0.0) {
                kept += 1;
            }
        } else {
            group.fill(0.0);
        }
    }
    kept
}

fn group_len_of(z: &Array3<f64>) -> usize {
    let (_, m, i) = z.dim();
    m * i
}

pub fn hard_threshold_group(z: &Array3<f64>, eta: f64, lambda0: f64) -> Array3<f64> {
    let mut out = z.as_standard_layout().into_owned();
    let g = group_len_of(&out);
    if g > 0 {
        hard_threshold_in_place(out.as_slice_mut().expect("standard layout"), g, eta, lambda0);
    }
    out
}

/// `m` and `|I|` are taken from the tensor shape `(p, m, |I|)`.
pub fn soft_threshold_group(z: &Array3<f64>, eta: f64, lambda1: f64) -> Array3<f64> {
    let mut out = z.as_standard_layout().into_owned();
    let g = group_len_of(&out);
    if g > 0 {
        soft_threshold_in_place(out.as_slice_mut().expect("standard layout"), g, eta, lambda1);
    }
    out
}

/// `λ0 · #{k : W_k ≠ 0}`.
pub fn group_l0_penalty(flat: &[f64], group_len: usize, lambda0: f64) -> f64 {
    let count = flat
        .chunks_exact(group_len)
        .filter(|g| g.iter().any(|&v| v != 0.0))
        .count();
    lambda0 * count as f64
}

/// `(λ2 / m|I|) ‖W‖²`.
pub fn ridge_penalty(flat: &[f64], group_len: usize, lambda2: f64) -> f64 {
    lambda2 / group_len as f64 * flat.iter().map(|v| v * v).sum::<f64>()
}

/// `(λ1 / √(m|I|)) Σ_k ‖W_k‖`.
pub fn group_lasso_penalty(flat: &[f64], group_len: usize, lambda1: f64) -> f64 {
    lambda1 / (group_len as f64).sqrt() * flat.chunks_exact(group_len).map(l2_norm).sum::<f64>()
}
