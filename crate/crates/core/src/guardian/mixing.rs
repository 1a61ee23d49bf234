//! Behavior-policy mixing over a finite action set.
//!
//! Used as an exact test double for the continuous pathway:
//! `π_b(a) = π_n(a)·(1 − I(a)) + π_h(a)·G`, where `G` is the agent's
//! probability mass on rejected actions.

/// Probability mass the agent puts on rejected actions.
pub fn rejected_mass(agent: &[f64], rejected: &[bool]) -> f64 {
    agent.iter().zip(rejected).filter(|(_, &r)| r).map(|(p, _)| p).sum()
}

/// The mixed distribution actually applied to the environment.
pub fn behavior_policy(agent: &[f64], expert: &[f64], rejected: &[bool]) -> Vec<f64> {
    assert_eq!(agent.len(), expert.len());
    assert_eq!(agent.len(), rejected.len());
    let g = rejected_mass(agent, rejected);
    agent
        .iter()
        .zip(expert)
        .zip(rejected)
        .map(|((&pn, &ph), &r)| if r { 0.0 } else { pn } + ph * g)
        .collect()
}
