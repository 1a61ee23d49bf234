//! Behaviour cloning by maximum likelihood on recorded demonstrations.

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numeric::{adam_step, nll_batch, AdamConfig, NumericError, OptState, ParamSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BcConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            steps: 5_000,
            batch_size: 256,
            lr: 1e-3,
        }
    }
}

/// Fits `policy` to `(obs, actions)` rows; returns the loss of every step.
pub fn fit<R: Rng + ?Sized>(
    policy: &mut ParamSet,
    opt: &mut OptState,
    obs: &Array2<f64>,
    actions: &Array2<f64>,
    cfg: &BcConfig,
    rng: &mut R,
) -> Result<Vec<f64>, NumericError> {
    if obs.nrows() != actions.nrows() {
        return Err(NumericError::shape("demonstration rows", obs.nrows(), actions.nrows()));
    }
    let mut losses = Vec::with_capacity(cfg.steps);
    if obs.nrows() == 0 {
        return Ok(losses);
    }
    let adam = AdamConfig::default();
    for _ in 0..cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.gen_range(0..obs.nrows())).collect();
        let x = obs.select(Axis(0), &idx);
        let a = actions.select(Axis(0), &idx);
        let cache = policy.forward_batch(x.view())?;
        let (loss, d_head) = nll_batch(cache.output().view(), a.view())?;
        let (grads, _) = policy.backward(&cache, d_head.view())?;
        adam_step(policy, &grads, opt, cfg.lr, &adam)?;
        losses.push(loss);
    }
    Ok(losses)
}
