//! Tanh-squashed diagonal Gaussian policy head.
//!
//! A policy network emits `2·d` values per state: `d` means followed by `d`
//! raw log standard deviations. Sampling is reparameterised,
//! `a = tanh(mean + exp(log_std)·noise)`, so gradients flow from the action
//! and its log-density back into the head.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

use super::NumericError;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Added inside `log(1 - tanh² + δ)`.
pub const SQUASH_EPS: f64 = 1e-6;
/// Actions are kept this far inside the open interval `(-1, 1)`; `tanh`
/// rounds to exactly ±1 for large arguments in double precision.
const ACTION_LIMIT: f64 = 1.0 - 1e-12;
const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

#[inline]
pub fn clamp_log_std(v: f64) -> f64 {
    v.clamp(LOG_STD_MIN, LOG_STD_MAX)
}

#[inline]
fn squash(u: f64) -> f64 {
    u.tanh().clamp(-ACTION_LIMIT, ACTION_LIMIT)
}

/// Draws one action given standard-normal `noise`.
pub fn sample_squashed_gaussian(mean: &[f64], log_std: &[f64], noise: &[f64]) -> Result<PolicyOutput, NumericError> {
    let d = mean.len();
    if log_std.len() != d {
        return Err(NumericError::shape("log_std", d, log_std.len()));
    }
    if noise.len() != d {
        return Err(NumericError::shape("noise", d, noise.len()));
    }
    let mut action = Vec::with_capacity(d);
    let mut log_std_c = Vec::with_capacity(d);
    let mut log_prob = 0.0;
    for i in 0..d {
        let ls = clamp_log_std(log_std[i]);
        let u = mean[i] + ls.exp() * noise[i];
        let a = squash(u);
        log_prob += -0.5 * noise[i] * noise[i] - ls - HALF_LOG_2PI;
        log_prob -= (1.0 - a * a + SQUASH_EPS).ln();
        action.push(a);
        log_std_c.push(ls);
    }
    Ok(PolicyOutput {
        action,
        log_prob,
        mean: mean.to_vec(),
        log_std: log_std_c,
    })
}

/// Deterministic action used for evaluation: `tanh(mean)`.
pub fn mean_action(mean: &[f64]) -> Vec<f64> {
    mean.iter().map(|&m| squash(m)).collect()
}

/// Log-density of a given squashed action.
pub fn squashed_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((&m, &ls), &a)| {
            let ls = clamp_log_std(ls);
            let a = a.clamp(-ACTION_LIMIT, ACTION_LIMIT);
            let z = (a.atanh() - m) / ls.exp();
            -0.5 * z * z - ls - HALF_LOG_2PI - (1.0 - a * a + SQUASH_EPS).ln()
        })
        .sum()
}

/// A batch of reparameterised samples together with what backward needs.
#[derive(Clone, Debug)]
pub struct SquashedBatch {
    pub actions: Array2<f64>,
    pub log_probs: Array1<f64>,
    std: Array2<f64>,
    noise: Array2<f64>,
    log_std_active: Array2<bool>,
}

impl SquashedBatch {
    /// `head` is the raw `B × 2d` policy output, `noise` is `B × d`.
    pub fn sample(head: ArrayView2<'_, f64>, noise: ArrayView2<'_, f64>) -> Result<Self, NumericError> {
        let (b, d) = noise.dim();
        if head.dim() != (b, 2 * d) {
            return Err(NumericError::shape("policy head width", 2 * d, head.ncols()));
        }
        let mut actions = Array2::zeros((b, d));
        let mut log_probs = Array1::zeros(b);
        let mut std = Array2::zeros((b, d));
        let mut active = Array2::from_elem((b, d), true);
        for i in 0..b {
            let mut lp = 0.0;
            for j in 0..d {
                let raw = head[[i, d + j]];
                let ls = clamp_log_std(raw);
                active[[i, j]] = (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw);
                let sd = ls.exp();
                let n = noise[[i, j]];
                let a = squash(head[[i, j]] + sd * n);
                lp += -0.5 * n * n - ls - HALF_LOG_2PI - (1.0 - a * a + SQUASH_EPS).ln();
                actions[[i, j]] = a;
                std[[i, j]] = sd;
            }
            if !lp.is_finite() {
                return Err(NumericError::NonFinite(format!("squashed log-prob, sample {i}")));
            }
            log_probs[i] = lp;
        }
        Ok(SquashedBatch {
            actions,
            log_probs,
            std,
            noise: noise.to_owned(),
            log_std_active: active,
        })
    }

    /// Chain rule from `dL/d action` and `dL/d log_prob` to the raw head.
    pub fn backward(&self, d_actions: ArrayView2<'_, f64>, d_log_probs: ArrayView1<'_, f64>) -> Array2<f64> {
        let (b, d) = self.actions.dim();
        let mut d_head = Array2::zeros((b, 2 * d));
        for i in 0..b {
            let dlp = d_log_probs[i];
            for j in 0..d {
                let a = self.actions[[i, j]];
                let one_minus = 1.0 - a * a;
                // log_prob = Σ(-½n² - log_std) - Σ log(1 - tanh²(u) + δ)
                let d_u = d_actions[[i, j]] * one_minus + dlp * 2.0 * a * one_minus / (one_minus + SQUASH_EPS);
                d_head[[i, j]] = d_u;
                if self.log_std_active[[i, j]] {
                    d_head[[i, d + j]] = d_u * self.std[[i, j]] * self.noise[[i, j]] - dlp;
                }
            }
        }
        d_head
    }
}

/// Mean negative log-likelihood of given actions and its gradient with
/// respect to the raw head. Used for behaviour cloning.
pub fn nll_batch(head: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>), NumericError> {
    let (b, d) = actions.dim();
    if head.dim() != (b, 2 * d) {
        return Err(NumericError::shape("policy head width", 2 * d, head.ncols()));
    }
    let mut loss = 0.0;
    let mut d_head = Array2::zeros((b, 2 * d));
    let scale = 1.0 / b as f64;
    for i in 0..b {
        let mean = head.slice(s![i, ..d]);
        let log_std = head.slice(s![i, d..]);
        let act = actions.row(i);
        loss -= squashed_log_prob(
            mean.as_slice().unwrap_or(&mean.to_vec()),
            log_std.as_slice().unwrap_or(&log_std.to_vec()),
            act.as_slice().unwrap_or(&act.to_vec()),
        );
        for j in 0..d {
            let raw = head[[i, d + j]];
            let ls = clamp_log_std(raw);
            let sd = ls.exp();
            let u = act[j].clamp(-ACTION_LIMIT, ACTION_LIMIT).atanh();
            let z = (u - head[[i, j]]) / sd;
            // -log N(u; m, s):  d/dm = -z/s,  d/dlog s = 1 - z²
            d_head[[i, j]] = -z / sd * scale;
            if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) {
                d_head[[i, d + j]] = (1.0 - z * z) * scale;
            }
        }
    }
    Ok((loss * scale, d_head))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_noise_gives_tanh_mean() {
        let out = sample_squashed_gaussian(&[0.3, -1.2], &[-50.0, -50.0], &[0.0, 0.0]).unwrap();
        assert_eq!(out.action, vec![0.3f64.tanh(), (-1.2f64).tanh()]);
        assert_eq!(out.log_std, vec![LOG_STD_MIN, LOG_STD_MIN]);
    }

    #[test]
    fn standard_normal_origin_log_prob() {
        let out = sample_squashed_gaussian(&[0.0], &[0.0], &[0.0]).unwrap();
        let expected = -0.5 * (2.0 * std::f64::consts::PI).ln() - (1.0 + SQUASH_EPS).ln();
        assert!((out.log_prob - expected).abs() < 1e-15);
        assert!((out.log_prob + 0.9189).abs() < 1e-4);
    }

    #[test]
    fn extreme_inputs_stay_inside_open_interval() {
        let out = sample_squashed_gaussian(&[40.0, -40.0], &[2.0, 2.0], &[5.0, -5.0]).unwrap();
        assert!(out.action.iter().all(|a| a.abs() < 1.0));
        assert!(out.log_prob.is_finite());
    }

    #[test]
    fn shape_errors() {
        assert!(sample_squashed_gaussian(&[0.0], &[0.0, 0.0], &[0.0]).is_err());
        assert!(sample_squashed_gaussian(&[0.0], &[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn batch_matches_single_sample() {
        let head = array![[0.2, -0.4, -0.5, 0.3], [1.0, 0.0, 3.0, -30.0]];
        let noise = array![[0.7, -1.1], [0.2, 0.4]];
        let batch = SquashedBatch::sample(head.view(), noise.view()).unwrap();
        for i in 0..2 {
            let row = head.row(i).to_vec();
            let single = sample_squashed_gaussian(&row[..2], &row[2..], &noise.row(i).to_vec()).unwrap();
            assert_eq!(single.action, batch.actions.row(i).to_vec());
            assert!((single.log_prob - batch.log_probs[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn log_prob_of_sampled_action_is_consistent() {
        let out = sample_squashed_gaussian(&[0.4, -0.2], &[-0.7, 0.1], &[0.3, -0.9]).unwrap();
        let lp = squashed_log_prob(&out.mean, &out.log_std, &out.action);
        assert!((lp - out.log_prob).abs() < 1e-9);
    }

    #[test]
    fn density_integrates_to_one() {
        for &(m, ls) in &[(0.0, 0.0), (0.8, -0.5), (-1.5, 0.7), (0.3, -1.5)] {
            let n = 200_000;
            let h = 2.0 / n as f64;
            let total: f64 = (0..n)
                .map(|k| {
                    let a = -1.0 + (k as f64 + 0.5) * h;
                    squashed_log_prob(&[m], &[ls], &[a]).exp() * h
                })
                .sum();
            assert!((total - 1.0).abs() < 1e-2, "mass {total} for ({m}, {ls})");
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let head = array![[0.2, -0.4, -0.5, 0.3], [0.9, 0.1, 0.4, -1.0]];
        let noise = array![[0.7, -1.1], [0.2, 0.4]];
        let wa = array![[0.3, -1.3], [0.8, 0.5]];
        let wl = array![0.7, -0.4];
        let f = |h: &Array2<f64>| {
            let s = SquashedBatch::sample(h.view(), noise.view()).unwrap();
            (&s.actions * &wa).sum() + s.log_probs.dot(&wl)
        };
        let s = SquashedBatch::sample(head.view(), noise.view()).unwrap();
        let g = s.backward(wa.view(), wl.view());
        for idx in [(0, 0), (0, 1), (0, 2), (0, 3), (1, 0), (1, 3)] {
            let mut hp = head.clone();
            let mut hm = head.clone();
            hp[idx] += 1e-6;
            hm[idx] -= 1e-6;
            let fd = (f(&hp) - f(&hm)) / 2e-6;
            assert!((fd - g[idx]).abs() < 1e-7, "{idx:?}: {fd} vs {}", g[idx]);
        }
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let head = array![[0.2, -0.4, -0.5, 0.3], [0.9, 0.1, 0.4, -1.0]];
        let acts = array![[0.5, -0.9], [-0.2, 0.3]];
        let (_, g) = nll_batch(head.view(), acts.view()).unwrap();
        for idx in [(0, 0), (0, 3), (1, 1), (1, 2)] {
            let mut hp = head.clone();
            let mut hm = head.clone();
            hp[idx] += 1e-6;
            hm[idx] -= 1e-6;
            let fd =
                (nll_batch(hp.view(), acts.view()).unwrap().0 - nll_batch(hm.view(), acts.view()).unwrap().0) / 2e-6;
            assert!((fd - g[idx]).abs() < 1e-7);
        }
    }
}
