//! The supervised data-collection and training loop.
//!
//! [`Collector`] owns the environment side of an episode and turns every
//! supervised step into a [`Transition`]; [`Trainer`] owns the learner, the
//! buffer and the update schedule. [`run_training`] drives both with a
//! scripted guardian, and the copilot server drives them with a live one.

use std::collections::VecDeque;
use std::sync::Arc;

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    gather, CostKind, EdgeTracker, IterationDiagnostics, LearnerState, ReplayBuffer, TrainConfig, TrainError,
    Transition,
};
use crate::env::{clamp_action, DrivingEnv, EnvConfig, MapSpec, StepResult};
use crate::guardian::{Guardian, GuardianDecision};

/// Environment rewards aligned with buffer positions. Only the reward-shaped
/// baseline ever builds one.
#[derive(Clone, Debug, Default)]
pub struct RewardChannel {
    values: VecDeque<f64>,
    capacity: usize,
}

impl RewardChannel {
    pub fn new(capacity: usize) -> Self {
        RewardChannel {
            values: VecDeque::new(),
            capacity: capacity.max(1),
        }
    }

    pub fn push(&mut self, r: f64) {
        if self.values.len() == self.capacity {
            self.values.pop_front();
        }
        self.values.push_back(r);
    }

    pub fn gather(&self, idx: &[usize]) -> Array1<f64> {
        let (a, b) = self.values.as_slices();
        if b.is_empty() {
            gather(a, idx)
        } else {
            let v: Vec<f64> = self.values.iter().copied().collect();
            gather(&v, idx)
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// How environment rewards reach the learner.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum RewardUse {
    /// Never plumbed into any update.
    #[default]
    Ignored,
    /// `reward − cost_weight · env_cost`, added to the bootstrap target.
    Shaped { cost_weight: f64 },
}

/// Per-episode row of the metrics stream.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub env_step: usize,
    pub episode: usize,
    pub map_seed: u64,
    pub steps: usize,
    pub takeover_rate: f64,
    pub episodic_intervention_cost: f64,
    pub episode_safety_violations: u64,
    pub cumulative_env_safety_violations: u64,
    pub episode_return: f64,
    pub success: bool,
    pub q_loss: f64,
    pub qint_loss: f64,
    pub policy_loss: f64,
    pub alpha: f64,
    pub q_gap: f64,
}

impl EpisodeMetrics {
    pub const CSV_HEADER: &'static str = "env_step,episode,map_seed,steps,takeover_rate,episodic_intervention_cost,\
episode_safety_violations,cumulative_env_safety_violations,episode_return,success,q_loss,qint_loss,policy_loss,alpha,q_gap";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.env_step,
            self.episode,
            self.map_seed,
            self.steps,
            self.takeover_rate,
            self.episodic_intervention_cost,
            self.episode_safety_violations,
            self.cumulative_env_safety_violations,
            self.episode_return,
            self.success as u8,
            self.q_loss,
            self.qint_loss,
            self.policy_loss,
            self.alpha,
            self.q_gap
        )
    }
}

/// Result of one supervised step.
#[derive(Clone, Debug)]
pub struct CollectedStep {
    pub transition: Transition,
    pub applied: [f64; 2],
    pub result: StepResult,
    /// Raw cost fell back to 1 because an action was the zero vector.
    pub degenerate_cost: bool,
    /// Set when this step ended the episode.
    pub finished: Option<EpisodeMetrics>,
}

/// Environment side of the loop: episode bookkeeping and rising-edge cost.
#[derive(Clone, Debug)]
pub struct Collector {
    env: DrivingEnv,
    maps: Vec<Arc<MapSpec>>,
    cost_kind: CostKind,
    zero_reward: bool,
    edge: EdgeTracker,
    obs: Vec<f64>,
    episode: usize,
    total_steps: usize,
    cumulative_violations: u64,
    ep_steps: usize,
    ep_takeovers: usize,
    ep_cost: f64,
    ep_violations: u64,
    ep_return: f64,
}

impl Collector {
    /// Episodes cycle through `maps` in order.
    pub fn new(env_cfg: EnvConfig, maps: Vec<Arc<MapSpec>>, cost_kind: CostKind, zero_reward: bool) -> Self {
        assert!(!maps.is_empty(), "at least one training map");
        let mut env = DrivingEnv::new(env_cfg);
        let obs = env.reset(maps[0].clone());
        Collector {
            env,
            maps,
            cost_kind,
            zero_reward,
            edge: EdgeTracker::default(),
            obs,
            episode: 0,
            total_steps: 0,
            cumulative_violations: 0,
            ep_steps: 0,
            ep_takeovers: 0,
            ep_cost: 0.0,
            ep_violations: 0,
            ep_return: 0.0,
        }
    }

    pub fn env(&self) -> &DrivingEnv {
        &self.env
    }

    pub fn observation(&self) -> &[f64] {
        &self.obs
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn cumulative_violations(&self) -> u64 {
        self.cumulative_violations
    }

    /// Running statistics of the current episode: (steps, takeover rate, cost).
    pub fn episode_stats(&self) -> (usize, f64, f64) {
        let rate = if self.ep_steps > 0 {
            self.ep_takeovers as f64 / self.ep_steps as f64
        } else {
            0.0
        };
        (self.ep_steps, rate, self.ep_cost)
    }

    pub fn map_seed(&self) -> u64 {
        self.env.map().map_or(0, |m| m.seed)
    }

    /// Applies `decision` (expert action when intervening, else `a_n`),
    /// charges the rising-edge cost and builds the transition.
    pub fn step(&mut self, a_n: [f64; 2], decision: GuardianDecision) -> Result<CollectedStep, TrainError> {
        let a_n = clamp_action(a_n);
        let a_h = if decision.intervene {
            Some(clamp_action(decision.expert_action.unwrap_or(a_n)))
        } else {
            None
        };
        let applied = a_h.unwrap_or(a_n);
        let mut result = self.env.step(applied)?;
        if self.zero_reward {
            result.reward = 0.0;
        }
        let (raw, degenerate) = match a_h {
            Some(h) => self.cost_kind.raw(a_n, h),
            None => (0.0, false),
        };
        let rising_cost = self.edge.charge(decision.intervene, raw);
        let transition = Transition {
            s: std::mem::take(&mut self.obs),
            a_n,
            a_h,
            intervened: decision.intervene,
            rising_cost,
            s_next: result.observation.clone(),
            terminal: result.absorbing(),
        };
        self.total_steps += 1;
        self.ep_steps += 1;
        self.ep_takeovers += decision.intervene as usize;
        self.ep_cost += rising_cost;
        let violations = result.env_cost as u64 + result.out_of_road as u64;
        self.ep_violations += violations;
        self.cumulative_violations += violations;
        self.ep_return += result.reward;
        self.obs = result.observation.clone();
        let finished = result.terminal().then(|| EpisodeMetrics {
            env_step: self.total_steps,
            episode: self.episode,
            map_seed: self.map_seed(),
            steps: self.ep_steps,
            takeover_rate: self.ep_takeovers as f64 / self.ep_steps as f64,
            episodic_intervention_cost: self.ep_cost,
            episode_safety_violations: self.ep_violations,
            cumulative_env_safety_violations: self.cumulative_violations,
            episode_return: self.ep_return,
            success: result.success,
            ..Default::default()
        });
        Ok(CollectedStep {
            transition,
            applied,
            result,
            degenerate_cost: degenerate,
            finished,
        })
    }

    /// Starts the next episode on the next map in the cycle.
    pub fn next_episode(&mut self) {
        self.episode += 1;
        let map = self.maps[self.episode % self.maps.len()].clone();
        self.obs = self.env.reset(map);
        self.edge.reset();
        self.ep_steps = 0;
        self.ep_takeovers = 0;
        self.ep_cost = 0.0;
        self.ep_violations = 0;
        self.ep_return = 0.0;
    }
}

/// Learner side of the loop: buffer, optional reward channel and schedule.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub learner: LearnerState,
    pub buffer: ReplayBuffer,
    pub rewards: Option<RewardChannel>,
    pub cfg: TrainConfig,
    reward_use: RewardUse,
    pushed: usize,
    pub last: IterationDiagnostics,
    pub iterations: usize,
}

impl Trainer {
    pub fn new(learner: LearnerState, cfg: TrainConfig, reward_use: RewardUse) -> Self {
        let rewards = match reward_use {
            RewardUse::Ignored => None,
            RewardUse::Shaped { .. } => Some(RewardChannel::new(cfg.buffer_capacity)),
        };
        Trainer {
            learner,
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            rewards,
            reward_use,
            cfg,
            pushed: 0,
            last: IterationDiagnostics::default(),
            iterations: 0,
        }
    }

    /// Buffers a step; the environment result is consulted only when a
    /// reward channel exists.
    pub fn push(&mut self, step: &CollectedStep) {
        self.buffer.push(step.transition.clone());
        if let (Some(ch), RewardUse::Shaped { cost_weight }) = (self.rewards.as_mut(), self.reward_use) {
            ch.push(step.result.reward - cost_weight * step.result.env_cost as f64);
        }
        self.pushed += 1;
    }

    /// Whether the schedule calls for an iteration after the latest push.
    pub fn due(&self) -> bool {
        self.pushed > 0 && self.pushed % self.cfg.steps_per_iteration == 0
    }

    pub fn train_once(&mut self) -> Result<IterationDiagnostics, TrainError> {
        let d = self
            .learner
            .train_iteration(&self.buffer, self.rewards.as_ref(), &self.cfg)?;
        if !d.warming_up {
            self.iterations += 1;
            self.last = d;
        }
        Ok(d)
    }
}

/// Everything the loop needs besides the learner and the guardian.
#[derive(Clone, Debug)]
pub struct TrainingSetup {
    pub env_cfg: EnvConfig,
    pub train_maps: Vec<Arc<MapSpec>>,
    pub total_steps: usize,
    pub cost_kind: CostKind,
    pub reward_use: RewardUse,
    /// Replace the environment reward by 0 at the source.
    pub zero_reward: bool,
    /// Seed of the action-sampling stream.
    pub seed: u64,
}

/// Hooks called by [`run_training`].
pub trait TrainingObserver {
    fn on_episode(&mut self, _metrics: &EpisodeMetrics) {}
    fn on_iteration(&mut self, _iteration: usize, _env_step: usize, _learner: &LearnerState) {}
}

impl TrainingObserver for () {}

#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    pub trainer: Trainer,
    pub episodes: Vec<EpisodeMetrics>,
    pub total_steps: usize,
    pub takeover_steps: usize,
    pub safety_violations: u64,
    pub degenerate_costs: usize,
    /// Reason the loop stopped before `total_steps`, if it did.
    pub stopped_early: Option<String>,
}

/// Supervised training: every step samples `a_n`, asks the guardian,
/// applies the safe action, charges the rising-edge cost and buffers the
/// transition; every `steps_per_iteration` steps the learner updates.
pub fn run_training<G: Guardian + ?Sized>(
    learner: LearnerState,
    guardian: &mut G,
    setup: &TrainingSetup,
    cfg: &TrainConfig,
    observer: &mut dyn TrainingObserver,
) -> TrainingOutcome {
    let mut collector = Collector::new(
        setup.env_cfg,
        setup.train_maps.clone(),
        setup.cost_kind,
        setup.zero_reward,
    );
    let mut trainer = Trainer::new(learner, cfg.clone(), setup.reward_use);
    let mut act_rng = ChaCha8Rng::seed_from_u64(setup.seed ^ 0x4143_5449_4f4e);
    let mut episodes = Vec::new();
    let mut takeover_steps = 0;
    let mut degenerate = 0;
    let mut stopped_early = None;
    guardian.reset();

    while collector.total_steps() < setup.total_steps {
        let a_n = match trainer.learner.act(collector.observation(), &mut act_rng) {
            Ok(a) => a,
            Err(e) => {
                stopped_early = Some(format!("policy: {e}"));
                break;
            }
        };
        let env = collector.env();
        let map = env.map().expect("collector always has a map").clone();
        let decision = guardian.decide(env.ego(), a_n, &map, env.config());
        let step = match collector.step(a_n, decision) {
            Ok(s) => s,
            Err(e) => {
                stopped_early = Some(format!("environment: {e}"));
                break;
            }
        };
        takeover_steps += step.transition.intervened as usize;
        degenerate += step.degenerate_cost as usize;
        trainer.push(&step);
        if trainer.due() {
            match trainer.train_once() {
                Ok(d) if !d.warming_up => {
                    observer.on_iteration(trainer.iterations, collector.total_steps(), &trainer.learner)
                }
                Ok(_) => {}
                Err(e) => {
                    stopped_early = Some(format!("update: {e}"));
                    break;
                }
            }
        }
        if let Some(mut m) = step.finished {
            let d = trainer.last;
            m.q_loss = d.q_loss;
            m.qint_loss = d.qint_loss;
            m.policy_loss = d.policy_loss;
            m.alpha = trainer.learner.alpha();
            m.q_gap = d.q_gap;
            observer.on_episode(&m);
            episodes.push(m);
            collector.next_episode();
            guardian.reset();
        }
    }
    if let Some(reason) = &stopped_early {
        log::error!("training stopped early: {reason}");
    }
    TrainingOutcome {
        total_steps: collector.total_steps(),
        safety_violations: collector.cumulative_violations(),
        trainer,
        episodes,
        takeover_steps,
        degenerate_costs: degenerate,
        stopped_early,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_map, Difficulty};
    use crate::guardian::{FixedGuardian, ScriptedGuardian};

    fn setup(total: usize) -> (TrainingSetup, TrainConfig) {
        let env_cfg = EnvConfig {
            horizon: 60,
            ..Default::default()
        };
        let maps = (0..2)
            .map(|s| Arc::new(generate_map(s, &Difficulty::default(), &env_cfg).unwrap()))
            .collect();
        let cfg = TrainConfig {
            hidden: vec![8],
            batch_size: 8,
            gradient_steps: 2,
            steps_per_iteration: 20,
            learning_starts: 20,
            ..Default::default()
        };
        (
            TrainingSetup {
                env_cfg,
                train_maps: maps,
                total_steps: total,
                cost_kind: CostKind::Cosine,
                reward_use: RewardUse::Ignored,
                zero_reward: false,
                seed: 1,
            },
            cfg,
        )
    }

    #[test]
    fn never_intervening_guardian_leaves_no_expert_data() {
        let (s, cfg) = setup(150);
        let l = LearnerState::new(s.env_cfg.obs_dim(), &cfg, 0);
        let out = run_training(l, &mut FixedGuardian::Never, &s, &cfg, &mut ());
        assert_eq!(out.total_steps, 150);
        assert!(out
            .trainer
            .buffer
            .iter()
            .all(|t| t.a_h.is_none() && t.rising_cost == 0.0));
        assert_eq!(out.takeover_steps, 0);
    }

    #[test]
    fn always_intervening_guardian_has_full_takeover_rate() {
        let (s, cfg) = setup(200);
        let l = LearnerState::new(s.env_cfg.obs_dim(), &cfg, 0);
        let out = run_training(l, &mut FixedGuardian::Always, &s, &cfg, &mut ());
        assert!(!out.episodes.is_empty());
        assert!(out.episodes.iter().all(|m| m.takeover_rate == 1.0));
    }

    #[test]
    fn rising_edge_holds_in_buffer() {
        let (s, cfg) = setup(300);
        let l = LearnerState::new(s.env_cfg.obs_dim(), &cfg, 0);
        let out = run_training(l, &mut ScriptedGuardian::default(), &s, &cfg, &mut ());
        let mut prev: Option<&Transition> = None;
        let mut edges = 0;
        for t in out.trainer.buffer.iter() {
            t.check().unwrap();
            // consecutive within an episode when the observations chain
            let continues = prev.is_some_and(|p| p.intervened && p.s_next == t.s);
            if t.intervened && continues {
                assert_eq!(t.rising_cost, 0.0);
            }
            edges += (t.rising_cost > 0.0) as usize;
            prev = Some(t);
        }
        assert!(edges > 0);
    }

    #[test]
    fn zeroing_rewards_does_not_change_updates() {
        let (mut s, cfg) = setup(200);
        let l = LearnerState::new(s.env_cfg.obs_dim(), &cfg, 0);
        let a = run_training(l.clone(), &mut ScriptedGuardian::default(), &s, &cfg, &mut ());
        s.zero_reward = true;
        let b = run_training(l, &mut ScriptedGuardian::default(), &s, &cfg, &mut ());
        assert_eq!(a.trainer.learner, b.trainer.learner);
        assert_eq!(a.trainer.buffer.to_bytes(), b.trainer.buffer.to_bytes());
    }
}
