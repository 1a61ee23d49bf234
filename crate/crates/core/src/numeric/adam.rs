use serde::{Deserialize, Serialize};

use super::{NumericError, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment accumulators shaped like the parameters they
/// optimise.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub step: u64,
}

impl OptState {
    pub fn new(params: &ParamSet) -> Self {
        OptState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// Adam state for a single scalar (the log-temperature).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalarAdam {
    pub m: f64,
    pub v: f64,
    pub step: u64,
}

/// One Adam step with bias correction, applied in place.
///
/// Returns `Ok(false)` and leaves everything untouched when any gradient
/// entry is non-finite.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &ParamSet,
    opt: &mut OptState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<bool, NumericError> {
    params.ensure_same_shape(grads, "adam gradients")?;
    params.ensure_same_shape(&opt.m, "adam state")?;
    if grads.values().any(|g| !g.is_finite()) {
        log::warn!("adam: non-finite gradient, update skipped at step {}", opt.step);
        return Ok(false);
    }
    opt.step += 1;
    let t = opt.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params
        .values_mut()
        .zip(grads.values())
        .zip(opt.m.values_mut())
        .zip(opt.v.values_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(true)
}

impl ScalarAdam {
    pub fn step(&mut self, param: &mut f64, grad: f64, lr: f64, cfg: &AdamConfig) -> bool {
        if !grad.is_finite() {
            log::warn!("adam: non-finite scalar gradient, update skipped");
            return false;
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        self.m = cfg.beta1 * self.m + (1.0 - cfg.beta1) * grad;
        self.v = cfg.beta2 * self.v + (1.0 - cfg.beta2) * grad * grad;
        *param -= lr * (self.m / bc1) / ((self.v / bc2).sqrt() + cfg.eps);
        true
    }
}
