//! Central finite-difference checks for the learner losses.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::losses::{policy_loss, proxy_q_loss, qint_loss};
use crate::numeric::{Activation, NumericError, ParamSet};

pub const FD_STEP: f64 = 1e-6;

/// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, 1e-10)` over all
/// parameters, with the numeric gradient from central differences.
pub fn relative_error<F>(params: &ParamSet, analytic: &ParamSet, mut loss: F) -> Result<f64, NumericError>
where
    F: FnMut(&ParamSet) -> Result<f64, NumericError>,
{
    let mut p = params.clone();
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nn = 0.0;
    for (i, g) in analytic.values().enumerate() {
        let orig = *p.value_mut(i);
        *p.value_mut(i) = orig + FD_STEP;
        let plus = loss(&p)?;
        *p.value_mut(i) = orig - FD_STEP;
        let minus = loss(&p)?;
        *p.value_mut(i) = orig;
        let num = (plus - minus) / (2.0 * FD_STEP);
        diff += (g - num).powi(2);
        na += g * g;
        nn += num * num;
    }
    Ok(diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-10))
}

/// Which loss a configuration exercises.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Proxy,
    Qint,
    Policy,
}

/// One random configuration: small networks, a random batch, and the
/// worst relative error of the chosen loss.
pub fn check_random_config(kind: LossKind, seed: u64) -> Result<f64, NumericError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs = rng.gen_range(2..6);
    let hidden = rng.gen_range(3..9);
    let b = rng.gen_range(2..7);
    let act = if rng.gen_bool(0.5) {
        Activation::Relu
    } else {
        Activation::Tanh
    };
    let q_sizes = [obs + 2, hidden, hidden, 1];
    let s = Array2::from_shape_fn((b, obs), |_| rng.gen_range(-1.0..1.0));
    let mut uniform = |rows: usize| Array2::from_shape_fn((rows, 2), |_| rng.gen_range(-0.95..0.95));
    let executed = uniform(b);
    let a_n = uniform(b);
    let a_h = uniform(b);
    let intervened: Vec<bool> = (0..b).map(|_| rng.gen_bool(0.5)).collect();
    let y = Array1::from_shape_fn(b, |_| rng.gen_range(-2.0..2.0));
    match kind {
        LossKind::Proxy => {
            let q = ParamSet::init(&q_sizes, act, &mut rng);
            let beta = rng.gen_range(0.0..10.0);
            let f = |p: &ParamSet| {
                proxy_q_loss(
                    p,
                    s.view(),
                    executed.view(),
                    a_n.view(),
                    a_h.view(),
                    &intervened,
                    y.view(),
                    beta,
                )
            };
            let g = f(&q)?.grads;
            relative_error(&q, &g, |p| f(p).map(|l| l.loss))
        }
        LossKind::Qint => {
            let q = ParamSet::init(&q_sizes, act, &mut rng);
            let f = |p: &ParamSet| qint_loss(p, s.view(), executed.view(), y.view());
            let g = f(&q)?.grads;
            relative_error(&q, &g, |p| f(p).map(|l| l.loss))
        }
        LossKind::Policy => {
            let policy = ParamSet::init(&[obs, hidden, hidden, 4], act, &mut rng);
            let q1 = ParamSet::init(&q_sizes, act, &mut rng);
            let q2 = ParamSet::init(&q_sizes, act, &mut rng);
            let qi = ParamSet::init(&q_sizes, act, &mut rng);
            let alpha = rng.gen_range(0.0..1.0);
            let use_int = rng.gen_bool(0.7);
            let noise = Array2::from_shape_fn((b, 2), |_| rng.sample::<f64, _>(StandardNormal));
            let f = |p: &ParamSet| policy_loss(p, &q1, &q2, use_int.then_some(&qi), alpha, s.view(), noise.view());
            let g = f(&policy)?.grads;
            relative_error(&policy, &g, |p| f(p).map(|l| l.loss))
        }
    }
}
