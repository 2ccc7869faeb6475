use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `θ ← θ − ψ·∇θ` elementwise.
pub fn sgd_step<T: Scalar>(params: &mut [T], grads: &[T], lr: T) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Shape {
            op: "sgd",
            left: vec![params.len()],
            right: vec![grads.len()],
        });
    }
    for (p, &g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

/// Step decay: the rate is multiplied by `delta` every `drop` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerConfig {
    pub alpha0: f64,
    pub delta: f64,
    pub drop: usize,
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return Err(Error::config(format!("alpha0 must be positive, got {}", self.alpha0)));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::config(format!("delta must lie in (0, 1], got {}", self.delta)));
        }
        if self.drop == 0 {
            return Err(Error::config("drop must be a positive number of epochs"));
        }
        Ok(())
    }
}

/// `alpha0 · delta^floor(epoch / drop)`, evaluated from epoch 0 on every call.
pub fn scheduler_rate(cfg: &SchedulerConfig, epoch: usize) -> f64 {
    let drops = (epoch / cfg.drop.max(1)) as i32;
    cfg.alpha0 * cfg.delta.powi(drops)
}
