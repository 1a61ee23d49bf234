//! Loss functions of the learner with their analytic gradients.
//!
//! Every function is pure: bootstrap targets come in precomputed and are
//! treated as constants, and the only parameters differentiated are the
//! ones the function returns gradients for.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::numeric::{NumericError, ParamSet, SquashedBatch};

/// Action dimension.
pub const ACT_DIM: usize = 2;

/// `[s | a]` rows for a Q network.
pub fn q_input(s: ArrayView2<'_, f64>, a: ArrayView2<'_, f64>) -> Result<Array2<f64>, NumericError> {
    concatenate(Axis(1), &[s.view(), a.view()]).map_err(|e| NumericError::InvalidArgument(format!("q input: {e}")))
}

/// `Q(s, a)` for every row.
pub fn q_values(q: &ParamSet, s: ArrayView2<'_, f64>, a: ArrayView2<'_, f64>) -> Result<Array1<f64>, NumericError> {
    let x = q_input(s, a)?;
    let cache = q.forward_batch(x.view())?;
    Ok(cache.output().column(0).to_owned())
}

/// Reparameterised policy samples at `s` with fixed standard-normal `noise`.
pub fn policy_sample(
    policy: &ParamSet,
    s: ArrayView2<'_, f64>,
    noise: ArrayView2<'_, f64>,
) -> Result<SquashedBatch, NumericError> {
    let head = policy.forward_batch(s)?;
    SquashedBatch::sample(head.output().view(), noise)
}

/// Entropy-regularised, reward-free bootstrap target
/// `y = r + (1 − d)·γ·[min(Q₁′, Q₂′)(s′, a′) − α·log π(a′|s′)]`, with `r`
/// absent (zero) for every guarded mode.
#[allow(clippy::too_many_arguments)]
pub fn proxy_q_target(
    q1_target: &ParamSet,
    q2_target: &ParamSet,
    s_next: ArrayView2<'_, f64>,
    a_next: ArrayView2<'_, f64>,
    log_prob_next: ArrayView1<'_, f64>,
    done: ArrayView1<'_, f64>,
    reward: Option<ArrayView1<'_, f64>>,
    alpha: f64,
    gamma: f64,
) -> Result<Array1<f64>, NumericError> {
    let q1 = q_values(q1_target, s_next, a_next)?;
    let q2 = q_values(q2_target, s_next, a_next)?;
    let mut y = Array1::zeros(q1.len());
    for i in 0..y.len() {
        let soft = q1[i].min(q2[i]) - alpha * log_prob_next[i];
        y[i] = (1.0 - done[i]) * gamma * soft + reward.map_or(0.0, |r| r[i]);
    }
    Ok(y)
}

/// Intervention-value target `C + (1 − d)·γ·Q^int(s′, a′)`.
pub fn qint_target(
    qint: &ParamSet,
    s_next: ArrayView2<'_, f64>,
    a_next: ArrayView2<'_, f64>,
    cost: ArrayView1<'_, f64>,
    done: ArrayView1<'_, f64>,
    gamma: f64,
) -> Result<Array1<f64>, NumericError> {
    let q = q_values(qint, s_next, a_next)?;
    Ok(Array1::from_shape_fn(q.len(), |i| {
        cost[i] + (1.0 - done[i]) * gamma * q[i]
    }))
}

#[derive(Clone, Debug)]
pub struct ProxyLoss {
    pub loss: f64,
    pub td: f64,
    pub conservative: f64,
    /// Mean `Q(s, a_h) − Q(s, a_n)` over intervened rows; 0 when none.
    pub q_gap: f64,
    pub grads: ParamSet,
}

/// Proxy value loss for one twin: `mean (y − Q(s, â))²` plus
/// `β · mean over intervened rows of [Q(s, a_n) − Q(s, a_h)]`.
#[allow(clippy::too_many_arguments)]
pub fn proxy_q_loss(
    q: &ParamSet,
    s: ArrayView2<'_, f64>,
    executed: ArrayView2<'_, f64>,
    a_n: ArrayView2<'_, f64>,
    a_h: ArrayView2<'_, f64>,
    intervened: &[bool],
    y: ArrayView1<'_, f64>,
    beta: f64,
) -> Result<ProxyLoss, NumericError> {
    let b = s.nrows();
    let idx: Vec<usize> = (0..b).filter(|&i| intervened[i]).collect();
    let k = idx.len();
    let s_int = s.select(Axis(0), &idx);
    let x = concatenate(
        Axis(0),
        &[
            q_input(s, executed)?.view(),
            q_input(s_int.view(), a_n.select(Axis(0), &idx).view())?.view(),
            q_input(s_int.view(), a_h.select(Axis(0), &idx).view())?.view(),
        ],
    )
    .map_err(|e| NumericError::InvalidArgument(format!("proxy loss rows: {e}")))?;
    let cache = q.forward_batch(x.view())?;
    let out = cache.output();
    let mut d_out = Array2::zeros(out.raw_dim());
    let mut td = 0.0;
    for i in 0..b {
        let err = out[[i, 0]] - y[i];
        td += err * err;
        d_out[[i, 0]] = 2.0 * err / b as f64;
    }
    td /= b as f64;
    let mut gap = 0.0;
    for j in 0..k {
        gap += out[[b + j, 0]] - out[[b + k + j, 0]];
        d_out[[b + j, 0]] = beta / k as f64;
        d_out[[b + k + j, 0]] = -beta / k as f64;
    }
    let conservative = if k > 0 { beta * gap / k as f64 } else { 0.0 };
    let q_gap = if k > 0 { -gap / k as f64 } else { 0.0 };
    let (grads, _) = q.backward(&cache, d_out.view())?;
    let loss = td + conservative;
    if !loss.is_finite() {
        return Err(NumericError::NonFinite("proxy value loss".into()));
    }
    Ok(ProxyLoss {
        loss,
        td,
        conservative,
        q_gap,
        grads,
    })
}

#[derive(Clone, Debug)]
pub struct QintLoss {
    pub loss: f64,
    pub grads: ParamSet,
}

/// `mean (Q^int(s, â) − target)²`.
pub fn qint_loss(
    qint: &ParamSet,
    s: ArrayView2<'_, f64>,
    executed: ArrayView2<'_, f64>,
    target: ArrayView1<'_, f64>,
) -> Result<QintLoss, NumericError> {
    let x = q_input(s, executed)?;
    let cache = qint.forward_batch(x.view())?;
    let out = cache.output();
    let b = out.nrows();
    let mut d_out = Array2::zeros(out.raw_dim());
    let mut loss = 0.0;
    for i in 0..b {
        let err = out[[i, 0]] - target[i];
        loss += err * err;
        d_out[[i, 0]] = 2.0 * err / b as f64;
    }
    loss /= b as f64;
    if !loss.is_finite() {
        return Err(NumericError::NonFinite("intervention value loss".into()));
    }
    let (grads, _) = qint.backward(&cache, d_out.view())?;
    Ok(QintLoss { loss, grads })
}

#[derive(Clone, Debug)]
pub struct PolicyLoss {
    pub loss: f64,
    pub grads: ParamSet,
    pub log_probs: Array1<f64>,
}

/// `Q(s, a)` and `∂Q/∂a` for every row.
fn q_and_action_grad(
    q: &ParamSet,
    s: ArrayView2<'_, f64>,
    a: ArrayView2<'_, f64>,
) -> Result<(Array1<f64>, Array2<f64>), NumericError> {
    let x = q_input(s, a)?;
    let cache = q.forward_batch(x.view())?;
    let ones = Array2::ones((x.nrows(), 1));
    let dx = q.backward_input(&cache, ones.view())?;
    let d = s.ncols();
    Ok((cache.output().column(0).to_owned(), dx.slice(s![.., d..]).to_owned()))
}

/// `mean −[min(Q₁, Q₂)(s, a) − α·log π(a|s) − Q^int(s, a)]` with
/// `a = tanh(μ + σ·noise)`. Gradients are for the policy only; `qint` is
/// `None` when the intervention term is dropped.
pub fn policy_loss(
    policy: &ParamSet,
    q1: &ParamSet,
    q2: &ParamSet,
    qint: Option<&ParamSet>,
    alpha: f64,
    s: ArrayView2<'_, f64>,
    noise: ArrayView2<'_, f64>,
) -> Result<PolicyLoss, NumericError> {
    let b = s.nrows();
    let head = policy.forward_batch(s)?;
    let sample = SquashedBatch::sample(head.output().view(), noise)?;
    let a = sample.actions.view();
    let (v1, g1) = q_and_action_grad(q1, s, a)?;
    let (v2, g2) = q_and_action_grad(q2, s, a)?;
    let int = qint.map(|q| q_and_action_grad(q, s, a)).transpose()?;

    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut d_actions = Array2::zeros(sample.actions.raw_dim());
    for i in 0..b {
        let (qmin, gmin) = if v1[i] <= v2[i] {
            (v1[i], g1.row(i))
        } else {
            (v2[i], g2.row(i))
        };
        let mut term = alpha * sample.log_probs[i] - qmin;
        for j in 0..ACT_DIM {
            d_actions[[i, j]] = -gmin[j] * inv_b;
        }
        if let Some((vi, gi)) = &int {
            term += vi[i];
            for j in 0..ACT_DIM {
                d_actions[[i, j]] += gi[[i, j]] * inv_b;
            }
        }
        loss += term * inv_b;
    }
    if !loss.is_finite() {
        return Err(NumericError::NonFinite("policy loss".into()));
    }
    let d_log_probs = Array1::from_elem(b, alpha * inv_b);
    let d_head = sample.backward(d_actions.view(), d_log_probs.view());
    let (grads, _) = policy.backward(&head, d_head.view())?;
    Ok(PolicyLoss {
        loss,
        grads,
        log_probs: sample.log_probs,
    })
}

/// Temperature loss `mean[−α·(log π + target_entropy)]` and its derivative
/// with respect to `log α`.
pub fn alpha_loss(log_alpha: f64, log_probs: ArrayView1<'_, f64>, target_entropy: f64) -> (f64, f64) {
    let alpha = log_alpha.exp();
    let m = log_probs.iter().map(|lp| lp + target_entropy).sum::<f64>() / log_probs.len().max(1) as f64;
    (-alpha * m, -alpha * m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Activation;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Q net returning the constant `c` (zero weights, bias c).
    fn constant_q(input: usize, c: f64) -> ParamSet {
        let mut q = ParamSet::zeros(&[input, 3, 1], Activation::Relu);
        q.layers[1].bias[0] = c;
        q
    }

    #[test]
    fn target_hand_values() {
        let s = Array2::zeros((1, 2));
        let a = Array2::zeros((1, 2));
        let q = constant_q(4, 1.0);
        let y = proxy_q_target(
            &q,
            &q,
            s.view(),
            a.view(),
            array![-1.0].view(),
            array![0.0].view(),
            None,
            0.0,
            0.99,
        )
        .unwrap();
        assert!((y[0] - 0.99).abs() < 1e-15);
        let y = proxy_q_target(
            &q,
            &q,
            s.view(),
            a.view(),
            array![-1.0].view(),
            array![0.0].view(),
            None,
            0.2,
            0.99,
        )
        .unwrap();
        assert!((y[0] - 1.188).abs() < 1e-12);
        let y = proxy_q_target(
            &q,
            &q,
            s.view(),
            a.view(),
            array![-1.0].view(),
            array![1.0].view(),
            None,
            0.2,
            0.99,
        )
        .unwrap();
        assert_eq!(y[0], 0.0);
    }

    #[test]
    fn qint_target_hand_values() {
        let s = Array2::zeros((1, 2));
        let a = Array2::zeros((1, 2));
        let q = constant_q(4, 1.0);
        let t = qint_target(&q, s.view(), a.view(), array![0.4].view(), array![0.0].view(), 0.99).unwrap();
        assert!((t[0] - 1.39).abs() < 1e-12);
        let t = qint_target(&q, s.view(), a.view(), array![0.4].view(), array![1.0].view(), 0.99).unwrap();
        assert_eq!(t[0], 0.4);
    }

    #[test]
    fn conservative_term_hand_value() {
        // Q(s, a) = a₀ through a linear net: Q(s,a_n)=2, Q(s,a_h)=1
        let mut q = ParamSet::zeros(&[3, 1], Activation::Relu);
        q.layers[0].weight[[1, 0]] = 1.0;
        let s = array![[0.0]];
        let a_n = array![[2.0, 0.0]];
        let a_h = array![[1.0, 0.0]];
        // executed = a_h, y chosen so the TD term is zero
        let l = proxy_q_loss(
            &q,
            s.view(),
            a_h.view(),
            a_n.view(),
            a_h.view(),
            &[true],
            array![1.0].view(),
            10.0,
        )
        .unwrap();
        assert_eq!(l.td, 0.0);
        assert!((l.conservative - 10.0).abs() < 1e-12);
        assert!((l.q_gap + 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_intervention_leaves_td_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = ParamSet::init(&[5, 8, 1], Activation::Relu, &mut rng);
        let s = Array2::from_shape_fn((4, 3), |(i, j)| (i + j) as f64 * 0.1);
        let a = Array2::from_shape_fn((4, 2), |(i, j)| (i as f64 - j as f64) * 0.2);
        let y = array![0.1, 0.2, 0.3, 0.4];
        let l = proxy_q_loss(&q, s.view(), a.view(), a.view(), a.view(), &[false; 4], y.view(), 10.0).unwrap();
        assert_eq!(l.loss, l.td);
        assert_eq!(l.q_gap, 0.0);
    }

    #[test]
    fn equal_actions_give_zero_conservative_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = ParamSet::init(&[5, 8, 1], Activation::Relu, &mut rng);
        let s = Array2::from_shape_fn((3, 3), |(i, j)| (i * j) as f64 * 0.1);
        let a = Array2::from_shape_fn((3, 2), |(i, _)| i as f64 * 0.3 - 0.2);
        let y = array![0.0, 0.0, 0.0];
        let l = proxy_q_loss(
            &q,
            s.view(),
            a.view(),
            a.view(),
            a.view(),
            &[true, false, true],
            y.view(),
            10.0,
        )
        .unwrap();
        assert!(l.conservative.abs() < 1e-15);
    }

    #[test]
    fn policy_loss_reduces_to_minus_min_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = ParamSet::init(&[3, 8, 4], Activation::Relu, &mut rng);
        let q1 = ParamSet::init(&[5, 8, 1], Activation::Relu, &mut rng);
        let q2 = ParamSet::init(&[5, 8, 1], Activation::Relu, &mut rng);
        let zero_int = ParamSet::zeros(&[5, 8, 1], Activation::Relu);
        let s = Array2::from_shape_fn((4, 3), |(i, j)| (i as f64 - j as f64) * 0.3);
        let noise = Array2::from_shape_fn((4, 2), |(i, j)| ((i * 2 + j) as f64).sin());
        let l = policy_loss(&p, &q1, &q2, Some(&zero_int), 0.0, s.view(), noise.view()).unwrap();
        let sample = policy_sample(&p, s.view(), noise.view()).unwrap();
        let v1 = q_values(&q1, s.view(), sample.actions.view()).unwrap();
        let v2 = q_values(&q2, s.view(), sample.actions.view()).unwrap();
        let expected = -(0..4).map(|i| v1[i].min(v2[i])).sum::<f64>() / 4.0;
        assert!((l.loss - expected).abs() < 1e-12);
    }

    #[test]
    fn shifting_qint_shifts_loss_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ParamSet::init(&[3, 8, 4], Activation::Relu, &mut rng);
        let q1 = ParamSet::init(&[5, 8, 1], Activation::Relu, &mut rng);
        let q2 = ParamSet::init(&[5, 8, 1], Activation::Relu, &mut rng);
        let qi = ParamSet::init(&[5, 8, 1], Activation::Relu, &mut rng);
        let mut shifted = qi.clone();
        shifted.layers[1].bias[0] += 2.5;
        let s = Array2::from_shape_fn((4, 3), |(i, j)| (i as f64 + j as f64) * 0.2 - 0.5);
        let noise = Array2::from_shape_fn((4, 2), |(i, j)| ((i + 3 * j) as f64).cos());
        let a = policy_loss(&p, &q1, &q2, Some(&qi), 0.3, s.view(), noise.view()).unwrap();
        let b = policy_loss(&p, &q1, &q2, Some(&shifted), 0.3, s.view(), noise.view()).unwrap();
        assert!((b.loss - a.loss - 2.5).abs() < 1e-12);
        for (x, y) in a.grads.values().zip(b.grads.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_gradient_signs() {
        // entropy exactly at target: −mean log π = H
        let (_, g) = alpha_loss(0.3, array![-2.0, -2.0].view(), 2.0);
        assert_eq!(g, 0.0);
        // entropy below target → gradient negative → α increases under descent
        let (_, g) = alpha_loss(0.0, array![-1.0, -0.5].view(), 2.0);
        assert!(g < 0.0);
    }
}
