//! Cubic smooth-step activation used by every split node.
//!
//! With `t = (x + θ) / (2θ)` clamped to `[0, 1]`, `S(x) = 3t² − 2t³`. The
//! function is exactly 0 below `−θ`, exactly 1 above `θ`, and C¹ everywhere,
//! so samples in the saturated region are routed hard and contribute no
//! gradient to the node.

use crate::error::{Error, Result};

/// Smooth-step value, assuming finite `x` and `theta > 0`. Hot-loop variant
/// of [`smooth_step`] without validation.
#[inline]
pub(crate) fn step_unchecked(x: f64, theta: f64) -> f64 {
    if x >= theta {
        1.0
    } else if x <= -theta {
        0.0
    } else {
        let t = (x + theta) / (2.0 * theta);
        t * t * (3.0 - 2.0 * t)
    }
}

/// Derivative of [`step_unchecked`].
#[inline]
pub(crate) fn step_derivative_unchecked(x: f64, theta: f64) -> f64 {
    if x >= theta || x <= -theta {
        0.0
    } else {
        let t = (x + theta) / (2.0 * theta);
        // dS/dt = 6t(1 - t), dt/dx = 1 / (2θ)
        3.0 * t * (1.0 - t) / theta
    }
}

fn check(x: f64, theta: f64) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::NonFinite(format!("smooth_step argument {x}")));
    }
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::Config(format!(
            "activation threshold must be positive, got {theta}"
        )));
    }
    Ok(())
}

pub fn smooth_step(x: f64, theta: f64) -> Result<f64> {
    check(x, theta)?;
    Ok(step_unchecked(x, theta))
}

pub fn smooth_step_derivative(x: f64, theta: f64) -> Result<f64> {
    check(x, theta)?;
    Ok(step_derivative_unchecked(x, theta))
}
