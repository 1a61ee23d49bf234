//! The expert side of the copilot: scripted expert, intervention predicate,
//! noise wrappers and tolerance estimation.

pub mod expert;
pub mod intervention;
pub mod mixing;
pub mod noise;
pub mod tolerance;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{clamp_action, DrivingEnv, EgoState, EnvConfig, EnvError, MapSpec, StepResult};

pub use expert::expert_action;
pub use intervention::{should_intervene, GuardianConfig};
pub use noise::{apply_noise, NoiseConfig, Noisy};
pub use tolerance::{estimate_tolerance, ToleranceEstimate};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuardianDecision {
    pub intervene: bool,
    /// Present when intervening, or always in recording mode.
    pub expert_action: Option<[f64; 2]>,
}

/// Anything that can oversee the agent.
pub trait Guardian {
    /// Clears per-episode takeover state.
    fn reset(&mut self) {}

    /// The expert's own action at `state`.
    fn expert(&mut self, state: &EgoState, map: &MapSpec, cfg: &EnvConfig) -> [f64; 2];

    /// One-shot intervention indicator, ignoring takeover persistence.
    fn flags(&mut self, state: &EgoState, action: [f64; 2], map: &MapSpec, cfg: &EnvConfig) -> bool;

    /// Per-step decision including takeover persistence.
    fn decide(&mut self, state: &EgoState, action: [f64; 2], map: &MapSpec, cfg: &EnvConfig) -> GuardianDecision;
}

impl<G: Guardian + ?Sized> Guardian for Box<G> {
    fn reset(&mut self) {
        (**self).reset()
    }
    fn expert(&mut self, state: &EgoState, map: &MapSpec, cfg: &EnvConfig) -> [f64; 2] {
        (**self).expert(state, map, cfg)
    }
    fn flags(&mut self, state: &EgoState, action: [f64; 2], map: &MapSpec, cfg: &EnvConfig) -> bool {
        (**self).flags(state, action, map, cfg)
    }
    fn decide(&mut self, state: &EgoState, action: [f64; 2], map: &MapSpec, cfg: &EnvConfig) -> GuardianDecision {
        (**self).decide(state, action, map, cfg)
    }
}

/// Pure-pursuit expert with the lookahead intervention predicate.
#[derive(Clone, Debug, Default)]
pub struct ScriptedGuardian {
    pub cfg: GuardianConfig,
    /// Report the expert action even when not intervening.
    pub recording: bool,
    hold: usize,
}

impl ScriptedGuardian {
    pub fn new(cfg: GuardianConfig) -> Self {
        ScriptedGuardian {
            cfg,
            recording: false,
            hold: 0,
        }
    }
}

impl Guardian for ScriptedGuardian {
    fn reset(&mut self) {
        self.hold = 0;
    }

    fn expert(&mut self, state: &EgoState, map: &MapSpec, cfg: &EnvConfig) -> [f64; 2] {
        expert_action(state, map, cfg)
    }

    fn flags(&mut self, state: &EgoState, action: [f64; 2], map: &MapSpec, cfg: &EnvConfig) -> bool {
        should_intervene(state, action, map, &self.cfg, cfg)
    }

    fn decide(&mut self, state: &EgoState, action: [f64; 2], map: &MapSpec, cfg: &EnvConfig) -> GuardianDecision {
        let intervene = if self.hold > 0 {
            self.hold -= 1;
            true
        } else if self.flags(state, action, map, cfg) {
            self.hold = self.cfg.min_takeover_duration.saturating_sub(1);
            true
        } else {
            false
        };
        let expert_action = (intervene || self.recording).then(|| expert_action(state, map, cfg));
        GuardianDecision {
            intervene,
            expert_action,
        }
    }
}

/// Test double with a constant intervention answer; the expert action is
/// the scripted one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FixedGuardian {
    Always,
    Never,
}

impl Guardian for FixedGuardian {
    fn expert(&mut self, state: &EgoState, map: &MapSpec, cfg: &EnvConfig) -> [f64; 2] {
        expert_action(state, map, cfg)
    }

    fn flags(&mut self, _: &EgoState, _: [f64; 2], _: &MapSpec, _: &EnvConfig) -> bool {
        *self == FixedGuardian::Always
    }

    fn decide(&mut self, state: &EgoState, action: [f64; 2], map: &MapSpec, cfg: &EnvConfig) -> GuardianDecision {
        let intervene = self.flags(state, action, map, cfg);
        GuardianDecision {
            intervene,
            expert_action: intervene.then(|| expert_action(state, map, cfg)),
        }
    }
}

/// Counts every query forwarded to the inner guardian.
#[derive(Debug)]
pub struct Counting<G> {
    pub inner: G,
    count: Arc<AtomicU64>,
}

impl<G> Counting<G> {
    pub fn new(inner: G) -> Self {
        Counting {
            inner,
            count: Arc::new(AtomicU64::new(0)),
        }
    }

    /// Shared handle to the query counter.
    pub fn counter(&self) -> Arc<AtomicU64> {
        self.count.clone()
    }

    pub fn queries(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }

    fn bump(&self) {
        self.count.fetch_add(1, Ordering::Relaxed);
    }
}

impl<G: Guardian> Guardian for Counting<G> {
    fn reset(&mut self) {
        self.inner.reset()
    }
    fn expert(&mut self, state: &EgoState, map: &MapSpec, cfg: &EnvConfig) -> [f64; 2] {
        self.bump();
        self.inner.expert(state, map, cfg)
    }
    fn flags(&mut self, state: &EgoState, action: [f64; 2], map: &MapSpec, cfg: &EnvConfig) -> bool {
        self.bump();
        self.inner.flags(state, action, map, cfg)
    }
    fn decide(&mut self, state: &EgoState, action: [f64; 2], map: &MapSpec, cfg: &EnvConfig) -> GuardianDecision {
        self.bump();
        self.inner.decide(state, action, map, cfg)
    }
}

/// Outcome of one supervised environment step.
#[derive(Clone, Debug)]
pub struct GuardedStep {
    pub applied: [f64; 2],
    pub decision: GuardianDecision,
    pub result: StepResult,
}

/// Queries the guardian, applies the safe action and steps the environment.
pub fn guarded_step<G: Guardian + ?Sized>(
    agent_action: [f64; 2],
    guardian: &mut G,
    env: &mut DrivingEnv,
) -> Result<GuardedStep, EnvError> {
    let map = env.map().cloned().ok_or(EnvError::EpisodeOver)?;
    let cfg = *env.config();
    let agent_action = clamp_action(agent_action);
    let decision = guardian.decide(env.ego(), agent_action, &map, &cfg);
    let applied = match (decision.intervene, decision.expert_action) {
        (true, Some(a)) => clamp_action(a),
        _ => agent_action,
    };
    let result = env.step(applied)?;
    Ok(GuardedStep {
        applied,
        decision,
        result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_map, Difficulty, Segment};

    fn env_on_straight() -> DrivingEnv {
        let map = MapSpec::from_parts(0, vec![Segment::Straight { length: 200.0 }], 3, 4.0, Vec::new()).unwrap();
        let mut env = DrivingEnv::new(EnvConfig::default());
        env.reset(Arc::new(map));
        env
    }

    #[test]
    fn always_applies_expert_action_exactly() {
        let mut env = env_on_straight();
        let expected = expert_action(env.ego(), env.map().unwrap(), env.config());
        let s = guarded_step([0.3, -0.7], &mut FixedGuardian::Always, &mut env).unwrap();
        assert!(s.decision.intervene);
        assert_eq!(s.applied, expected);
    }

    #[test]
    fn never_applies_agent_action_exactly() {
        let mut env = env_on_straight();
        let s = guarded_step([0.3, -0.7], &mut FixedGuardian::Never, &mut env).unwrap();
        assert!(!s.decision.intervene);
        assert!(s.decision.expert_action.is_none());
        assert_eq!(s.applied, [0.3, -0.7]);
    }

    #[test]
    fn min_takeover_duration_holds_control() {
        let env = env_on_straight();
        let mut g = ScriptedGuardian::new(GuardianConfig {
            min_takeover_duration: 5,
            stall_progress: 0.0,
            ..Default::default()
        });
        let map = env.map().unwrap().clone();
        let cfg = *env.config();
        let mut state = *env.ego();
        state.y = 5.0;
        assert!(g.decide(&state, [0.0; 2], &map, &cfg).intervene);
        // back in a calm state, the takeover persists for four more steps
        for _ in 0..4 {
            assert!(g.decide(env.ego(), [0.0; 2], &map, &cfg).intervene);
        }
        assert!(!g.decide(env.ego(), [0.0; 2], &map, &cfg).intervene);
        g.hold = 3;
        g.reset();
        assert!(!g.decide(env.ego(), [0.0; 2], &map, &cfg).intervene);
    }

    #[test]
    fn counting_wrapper_counts() {
        let mut g = Counting::new(FixedGuardian::Never);
        let mut env = env_on_straight();
        assert_eq!(g.queries(), 0);
        guarded_step([0.0, 1.0], &mut g, &mut env).unwrap();
        guarded_step([0.0, 1.0], &mut g, &mut env).unwrap();
        assert_eq!(g.queries(), 2);
    }

    #[test]
    fn expert_driven_episode_is_safe_under_guardian() {
        let cfg = EnvConfig::default();
        let map = Arc::new(generate_map(3, &Difficulty::default(), &cfg).unwrap());
        let mut env = DrivingEnv::new(cfg);
        env.reset(map.clone());
        let mut g = ScriptedGuardian::default();
        loop {
            let a = expert_action(env.ego(), &map, &cfg);
            let s = guarded_step(a, &mut g, &mut env).unwrap();
            assert_eq!(s.result.env_cost, 0);
            if s.result.terminal() {
                assert!(s.result.success);
                break;
            }
        }
    }

    #[test]
    fn predicate_is_pure() {
        let cfg = EnvConfig::default();
        let map = generate_map(5, &Difficulty::default(), &cfg).unwrap();
        let mut state = EgoState::spawn(&map);
        state.speed = 6.0;
        for a in [[1.0, 1.0], [-1.0, 0.2], [0.0, 0.0]] {
            let first = should_intervene(&state, a, &map, &GuardianConfig::default(), &cfg);
            for _ in 0..3 {
                assert_eq!(
                    first,
                    should_intervene(&state, a, &map, &GuardianConfig::default(), &cfg)
                );
            }
        }
    }
}
