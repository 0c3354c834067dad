use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense-to-sparse annealing of the group-ℓ0 strength,
/// `λ0(t) = γ (1 − e^{−s·t})`, where `t` counts mini-batch steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub gamma: f64,
    pub temperature: f64,
}

impl SchedulerConfig {
    pub fn new(gamma: f64, temperature: f64) -> Result<Self> {
        let s = Self { gamma, temperature };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("scheduler gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "scheduler temperature must be > 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn lambda0(&self, step: u64) -> f64 {
        scheduler_lambda0(step, self)
    }
}

pub fn scheduler_lambda0(step: u64, cfg: &SchedulerConfig) -> f64 {
    -cfg.gamma * (-cfg.temperature * step as f64).exp_m1()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_examples() {
        let s = SchedulerConfig::new(1.0, 0.1).unwrap();
        assert_eq!(s.lambda0(0), 0.0);
        assert!((s.lambda0(10) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((s.lambda0(10) - 0.6321).abs() < 1e-4);
        assert!((s.lambda0(250) - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(SchedulerConfig::new(-1.0, 0.1).is_err());
        assert!(SchedulerConfig::new(1.0, 0.0).is_err());
        assert!(SchedulerConfig::new(f64::NAN, 0.1).is_err());
    }
}
