//! Intervention cost and its rising-edge gating.

use serde::{Deserialize, Serialize};

/// Norm below which an action counts as the zero vector.
pub const ZERO_NORM: f64 = 1e-8;

/// `1 − cos(a_n, a_h)`, in `[0, 2]`.
///
/// The cosine is undefined for a zero vector; the cost is then 1, as for
/// orthogonal actions, and the second value reports the fallback.
pub fn intervention_cost(a_n: [f64; 2], a_h: [f64; 2]) -> (f64, bool) {
    let nn = a_n[0].hypot(a_n[1]);
    let nh = a_h[0].hypot(a_h[1]);
    if nn < ZERO_NORM || nh < ZERO_NORM {
        return (1.0, true);
    }
    let cos = (a_n[0] * a_h[0] + a_n[1] * a_h[1]) / (nn * nh);
    ((1.0 - cos).clamp(0.0, 2.0), false)
}

/// Cost charged only on the first step of a takeover.
pub fn rising_edge_cost(intervened_now: bool, intervened_prev: bool, raw_cost: f64) -> f64 {
    if intervened_now && !intervened_prev {
        raw_cost
    } else {
        0.0
    }
}

/// How the raw cost of a takeover step is computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostKind {
    #[default]
    Cosine,
    /// A flat +1 per takeover regardless of the actions.
    Constant,
}

impl CostKind {
    pub fn raw(self, a_n: [f64; 2], a_h: [f64; 2]) -> (f64, bool) {
        match self {
            CostKind::Cosine => intervention_cost(a_n, a_h),
            CostKind::Constant => (1.0, false),
        }
    }
}

/// Tracks the previous intervention flag within an episode.
#[derive(Clone, Copy, Debug, Default)]
pub struct EdgeTracker {
    prev: bool,
}

impl EdgeTracker {
    pub fn reset(&mut self) {
        self.prev = false;
    }

    /// Rising-edge cost of this step, updating the tracker.
    pub fn charge(&mut self, intervened: bool, raw_cost: f64) -> f64 {
        let c = rising_edge_cost(intervened, self.prev, raw_cost);
        self.prev = intervened;
        c
    }
}
