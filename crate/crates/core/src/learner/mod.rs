//! The reward-free learner: replay buffer with intervention bookkeeping,
//! proxy value, intervention value, policy and temperature updates, and the
//! supervised training loop.

pub mod bc;
pub mod buffer;
pub mod cost;
pub mod gradcheck;
pub mod losses;
pub mod training;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::numeric::{
    adam_step, mean_action, polyak, sample_squashed_gaussian, Activation, AdamConfig, Checkpoint, CheckpointError,
    NumericError, OptState, ParamSet, ScalarAdam,
};

pub use buffer::{Batch, ReplayBuffer, Transition};
pub use cost::{intervention_cost, rising_edge_cost, CostKind, EdgeTracker};
pub use losses::ACT_DIM;
pub use training::{run_training, EpisodeMetrics, RewardChannel, TrainingOutcome, TrainingSetup};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    pub batch_size: usize,
    /// Weight of the conservative term ("CQL temperature").
    pub cql_weight: f64,
    pub target_entropy: f64,
    /// Use `−dim(A)` instead of `target_entropy`.
    pub conventional_entropy: bool,
    pub learning_starts: usize,
    pub steps_per_iteration: usize,
    pub gradient_steps: usize,
    pub buffer_capacity: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub init_log_alpha: f64,
    /// Subtract the intervention value in the policy objective.
    pub use_qint_in_policy: bool,
    /// Bootstrap the intervention value from a Polyak-averaged copy.
    pub qint_target_network: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.99,
            tau: 0.005,
            lr: 1e-4,
            batch_size: 256,
            cql_weight: 10.0,
            target_entropy: 2.0,
            conventional_entropy: false,
            learning_starts: 100,
            steps_per_iteration: 100,
            gradient_steps: 100,
            buffer_capacity: 50_000,
            hidden: vec![256, 256],
            activation: Activation::Relu,
            init_log_alpha: 0.0,
            use_qint_in_policy: true,
            qint_target_network: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(format!("gamma {} outside (0, 1)", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(format!("tau {} outside (0, 1]", self.tau));
        }
        if self.cql_weight < 0.0 {
            return Err("cql_weight must be non-negative".into());
        }
        if self.batch_size == 0 || self.steps_per_iteration == 0 {
            return Err("batch_size and steps_per_iteration must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err("lr must be positive".into());
        }
        Ok(())
    }

    pub fn effective_target_entropy(&self) -> f64 {
        if self.conventional_entropy {
            -(ACT_DIM as f64)
        } else {
            self.target_entropy
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("non-finite value in {0}; iteration rolled back")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Means over the gradient steps of one iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub warming_up: bool,
    pub gradient_steps: usize,
    pub q_loss: f64,
    pub qint_loss: f64,
    pub policy_loss: f64,
    pub alpha: f64,
    /// Mean `Q(s, a_h) − Q(s, a_n)` over intervened samples.
    pub q_gap: f64,
    pub entropy: f64,
}

/// All learnable state plus the sampling stream of the updates.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnerState {
    pub policy: ParamSet,
    pub q1: ParamSet,
    pub q2: ParamSet,
    pub q1_target: ParamSet,
    pub q2_target: ParamSet,
    pub qint: ParamSet,
    pub qint_target: Option<ParamSet>,
    pub log_alpha: f64,
    pub policy_opt: OptState,
    pub q1_opt: OptState,
    pub q2_opt: OptState,
    pub qint_opt: OptState,
    pub alpha_opt: ScalarAdam,
    pub updates: u64,
    rng: ChaCha8Rng,
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut v = vec![input];
    v.extend_from_slice(hidden);
    v.push(output);
    v
}

impl LearnerState {
    pub fn new(obs_dim: usize, cfg: &TrainConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = ParamSet::init(&sizes(obs_dim, &cfg.hidden, 2 * ACT_DIM), cfg.activation, &mut rng);
        let q_sizes = sizes(obs_dim + ACT_DIM, &cfg.hidden, 1);
        let q1 = ParamSet::init(&q_sizes, cfg.activation, &mut rng);
        let q2 = ParamSet::init(&q_sizes, cfg.activation, &mut rng);
        let qint = ParamSet::init(&q_sizes, cfg.activation, &mut rng);
        LearnerState {
            policy_opt: OptState::new(&policy),
            q1_opt: OptState::new(&q1),
            q2_opt: OptState::new(&q2),
            qint_opt: OptState::new(&qint),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            qint_target: cfg.qint_target_network.then(|| qint.clone()),
            policy,
            q1,
            q2,
            qint,
            log_alpha: cfg.init_log_alpha,
            alpha_opt: ScalarAdam::default(),
            updates: 0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5550_4441_5445),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.policy.input_dim()
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// Stochastic action for data collection.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<[f64; 2], NumericError> {
        let head = self.policy.forward(obs)?;
        let noise: Vec<f64> = (0..ACT_DIM).map(|_| rng.sample(StandardNormal)).collect();
        let out = sample_squashed_gaussian(&head[..ACT_DIM], &head[ACT_DIM..], &noise)?;
        Ok([out.action[0], out.action[1]])
    }

    /// Deterministic `tanh(mean)` action for evaluation.
    pub fn act_deterministic(&self, obs: &[f64]) -> Result<[f64; 2], NumericError> {
        policy_mean_action(&self.policy, obs)
    }

    /// Proxy value `Q₁(s, a)`.
    pub fn q_value(&self, obs: &[f64], action: [f64; 2]) -> Result<f64, NumericError> {
        let mut x = obs.to_vec();
        x.extend_from_slice(&action);
        Ok(self.q1.forward(&x)?[0])
    }

    /// One iteration of gradient steps. Below `learning_starts` transitions
    /// it does nothing. On a non-finite value the state is rolled back to
    /// its value at entry.
    pub fn train_iteration(
        &mut self,
        buffer: &ReplayBuffer,
        rewards: Option<&RewardChannel>,
        cfg: &TrainConfig,
    ) -> Result<IterationDiagnostics, TrainError> {
        if buffer.len() < cfg.learning_starts.max(1) {
            return Ok(IterationDiagnostics {
                warming_up: true,
                alpha: self.alpha(),
                ..Default::default()
            });
        }
        let snapshot = self.clone();
        let mut d = IterationDiagnostics::default();
        for _ in 0..cfg.gradient_steps {
            match self.gradient_step(buffer, rewards, cfg) {
                Ok(step) => {
                    d.q_loss += step.q_loss;
                    d.qint_loss += step.qint_loss;
                    d.policy_loss += step.policy_loss;
                    d.q_gap += step.q_gap;
                    d.entropy += step.entropy;
                    d.gradient_steps += 1;
                }
                Err(e) => {
                    log::error!("update aborted after {} gradient steps: {e}", d.gradient_steps);
                    *self = snapshot;
                    return Err(match e {
                        TrainError::Numeric(NumericError::NonFinite(w)) => TrainError::NonFinite(w),
                        other => other,
                    });
                }
            }
        }
        let n = d.gradient_steps.max(1) as f64;
        d.q_loss /= n;
        d.qint_loss /= n;
        d.policy_loss /= n;
        d.q_gap /= n;
        d.entropy /= n;
        d.alpha = self.alpha();
        Ok(d)
    }

    fn normal(&mut self, rows: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, ACT_DIM), |_| self.rng.sample(StandardNormal))
    }

    fn gradient_step(
        &mut self,
        buffer: &ReplayBuffer,
        rewards: Option<&RewardChannel>,
        cfg: &TrainConfig,
    ) -> Result<IterationDiagnostics, TrainError> {
        let idx = buffer.sample_indices(cfg.batch_size, &mut self.rng);
        let mut batch = buffer.batch(&idx);
        if let Some(r) = rewards {
            batch.reward = Some(r.gather(&idx));
        }
        let noise_next = self.normal(batch.len());
        let noise_now = self.normal(batch.len());
        let alpha = self.alpha();
        let adam = AdamConfig::default();

        let next = losses::policy_sample(&self.policy, batch.s_next.view(), noise_next.view())?;
        let y = losses::proxy_q_target(
            &self.q1_target,
            &self.q2_target,
            batch.s_next.view(),
            next.actions.view(),
            next.log_probs.view(),
            batch.done.view(),
            batch.reward.as_ref().map(|r| r.view()),
            alpha,
            cfg.gamma,
        )?;
        let boot = self.qint_target.as_ref().unwrap_or(&self.qint);
        let c_target = losses::qint_target(
            boot,
            batch.s_next.view(),
            next.actions.view(),
            batch.cost.view(),
            batch.done.view(),
            cfg.gamma,
        )?;

        let proxy = |q: &ParamSet| {
            losses::proxy_q_loss(
                q,
                batch.s.view(),
                batch.executed.view(),
                batch.a_n.view(),
                batch.a_h.view(),
                &batch.intervened,
                y.view(),
                cfg.cql_weight,
            )
        };
        let l1 = proxy(&self.q1)?;
        let l2 = proxy(&self.q2)?;
        let li = losses::qint_loss(&self.qint, batch.s.view(), batch.executed.view(), c_target.view())?;
        adam_step(&mut self.q1, &l1.grads, &mut self.q1_opt, cfg.lr, &adam)?;
        adam_step(&mut self.q2, &l2.grads, &mut self.q2_opt, cfg.lr, &adam)?;
        adam_step(&mut self.qint, &li.grads, &mut self.qint_opt, cfg.lr, &adam)?;

        let lp = losses::policy_loss(
            &self.policy,
            &self.q1,
            &self.q2,
            cfg.use_qint_in_policy.then_some(&self.qint),
            alpha,
            batch.s.view(),
            noise_now.view(),
        )?;
        adam_step(&mut self.policy, &lp.grads, &mut self.policy_opt, cfg.lr, &adam)?;

        let (_, g_alpha) = losses::alpha_loss(self.log_alpha, lp.log_probs.view(), cfg.effective_target_entropy());
        self.alpha_opt.step(&mut self.log_alpha, g_alpha, cfg.lr, &adam);

        polyak(&mut self.q1_target, &self.q1, cfg.tau)?;
        polyak(&mut self.q2_target, &self.q2, cfg.tau)?;
        if let Some(t) = self.qint_target.as_mut() {
            polyak(t, &self.qint, cfg.tau)?;
        }
        self.updates += 1;
        if !self.log_alpha.is_finite() {
            return Err(TrainError::NonFinite("temperature".into()));
        }
        Ok(IterationDiagnostics {
            q_loss: l1.loss + l2.loss,
            qint_loss: li.loss,
            policy_loss: lp.loss,
            q_gap: l1.q_gap,
            entropy: -lp.log_probs.mean().unwrap_or(0.0),
            ..Default::default()
        })
    }

    /// Mean `Q₁(s, a_h) − Q₁(s, a_n)` over the given intervened transitions.
    pub fn mean_q_gap<'a>(
        &self,
        transitions: impl IntoIterator<Item = &'a Transition>,
    ) -> Result<(f64, usize), NumericError> {
        let (mut sum, mut n) = (0.0, 0usize);
        for t in transitions {
            if let (true, Some(a_h)) = (t.intervened, t.a_h) {
                sum += self.q_value(&t.s, a_h)? - self.q_value(&t.s, t.a_n)?;
                n += 1;
            }
        }
        Ok((if n > 0 { sum / n as f64 } else { 0.0 }, n))
    }

    pub fn to_checkpoint(&self, config_hash: &str) -> Checkpoint {
        let mut c = Checkpoint {
            config_hash: config_hash.to_string(),
            ..Default::default()
        };
        for (name, p, o) in [
            ("policy", &self.policy, Some(&self.policy_opt)),
            ("q1", &self.q1, Some(&self.q1_opt)),
            ("q2", &self.q2, Some(&self.q2_opt)),
            ("q1_target", &self.q1_target, None),
            ("q2_target", &self.q2_target, None),
            ("qint", &self.qint, Some(&self.qint_opt)),
        ] {
            c.params.insert(name.into(), p.clone());
            if let Some(o) = o {
                c.opt_states.insert(name.into(), o.clone());
            }
        }
        if let Some(t) = &self.qint_target {
            c.params.insert("qint_target".into(), t.clone());
        }
        let word = self.rng.get_word_pos();
        let bits = |v: u64| f64::from_bits(v);
        for (k, v) in [
            ("log_alpha", self.log_alpha),
            ("alpha_m", self.alpha_opt.m),
            ("alpha_v", self.alpha_opt.v),
            ("alpha_step", bits(self.alpha_opt.step)),
            ("updates", bits(self.updates)),
            ("rng_word_lo", bits(word as u64)),
            ("rng_word_hi", bits((word >> 64) as u64)),
        ] {
            c.scalars.insert(k.into(), v);
        }
        for (i, chunk) in self.rng.get_seed().chunks(8).enumerate() {
            let w = u64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            c.scalars.insert(format!("rng_seed_{i}"), bits(w));
        }
        c
    }

    /// Restores a state written by [`LearnerState::to_checkpoint`], including
    /// the position of the update stream.
    pub fn from_checkpoint(c: &Checkpoint, expected_hash: Option<&str>) -> Result<Self, CheckpointError> {
        if let Some(h) = expected_hash {
            if c.config_hash != h {
                return Err(CheckpointError::ConfigMismatch {
                    expected: h.into(),
                    found: c.config_hash.clone(),
                });
            }
        }
        let bits = |k: &str| c.scalar(k).map(f64::to_bits);
        let mut seed = [0u8; 32];
        for i in 0..4 {
            seed[i * 8..(i + 1) * 8].copy_from_slice(&bits(&format!("rng_seed_{i}"))?.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_word_pos(((bits("rng_word_hi")? as u128) << 64) | bits("rng_word_lo")? as u128);
        Ok(LearnerState {
            policy: c.param("policy")?.clone(),
            q1: c.param("q1")?.clone(),
            q2: c.param("q2")?.clone(),
            q1_target: c.param("q1_target")?.clone(),
            q2_target: c.param("q2_target")?.clone(),
            qint: c.param("qint")?.clone(),
            qint_target: c.params.get("qint_target").cloned(),
            log_alpha: c.scalar("log_alpha")?,
            policy_opt: c.opt("policy")?.clone(),
            q1_opt: c.opt("q1")?.clone(),
            q2_opt: c.opt("q2")?.clone(),
            qint_opt: c.opt("qint")?.clone(),
            alpha_opt: ScalarAdam {
                m: c.scalar("alpha_m")?,
                v: c.scalar("alpha_v")?,
                step: bits("alpha_step")?,
            },
            updates: bits("updates")?,
            rng,
        })
    }
}

/// Deterministic `tanh(mean)` of a policy head.
pub fn policy_mean_action(policy: &ParamSet, obs: &[f64]) -> Result<[f64; 2], NumericError> {
    let head = policy.forward(obs)?;
    let a = mean_action(&head[..ACT_DIM]);
    Ok([a[0], a[1]])
}

/// Column of per-sample values gathered by index.
pub(crate) fn gather(values: &[f64], idx: &[usize]) -> Array1<f64> {
    Array1::from_iter(idx.iter().map(|&i| values[i]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            hidden: vec![16, 16],
            batch_size: 8,
            gradient_steps: 5,
            learning_starts: 10,
            ..Default::default()
        }
    }

    fn filled_buffer(n: usize, obs: usize) -> ReplayBuffer {
        let mut b = ReplayBuffer::new(1000);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut prev = false;
        for i in 0..n {
            let intervened = rng.gen_bool(0.3);
            let a_n = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let a_h = intervened.then(|| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            let raw = a_h.map_or(0.0, |h| intervention_cost(a_n, h).0);
            b.push(Transition {
                s: (0..obs).map(|j| ((i + j) as f64 * 0.1).sin()).collect(),
                a_n,
                a_h,
                intervened,
                rising_cost: rising_edge_cost(intervened, prev, raw),
                s_next: (0..obs).map(|j| ((i + j + 1) as f64 * 0.1).sin()).collect(),
                terminal: i % 50 == 49,
            });
            prev = intervened;
        }
        b
    }

    #[test]
    fn warming_up_is_a_no_op() {
        let cfg = small_cfg();
        let mut l = LearnerState::new(4, &cfg, 0);
        let before = l.clone();
        let d = l.train_iteration(&filled_buffer(5, 4), None, &cfg).unwrap();
        assert!(d.warming_up);
        assert_eq!(l, before);
    }

    #[test]
    fn iterations_are_deterministic() {
        let cfg = small_cfg();
        let buf = filled_buffer(60, 4);
        let mut a = LearnerState::new(4, &cfg, 3);
        let mut b = LearnerState::new(4, &cfg, 3);
        let da = a.train_iteration(&buf, None, &cfg).unwrap();
        let db = b.train_iteration(&buf, None, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(da, db);
        assert_eq!(da.gradient_steps, 5);
        assert!(da.q_gap.is_finite());
    }

    #[test]
    fn checkpoint_round_trip_resumes_identically() {
        let cfg = small_cfg();
        let buf = filled_buffer(60, 4);
        let mut a = LearnerState::new(4, &cfg, 3);
        a.train_iteration(&buf, None, &cfg).unwrap();
        let bytes = a.to_checkpoint("h").to_bytes();
        let mut b = LearnerState::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap(), Some("h")).unwrap();
        assert_eq!(a, b);
        a.train_iteration(&buf, None, &cfg).unwrap();
        b.train_iteration(&buf, None, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            LearnerState::from_checkpoint(&a.to_checkpoint("h"), Some("other")),
            Err(CheckpointError::ConfigMismatch { .. })
        ));
    }

    #[test]
    fn conservative_step_widens_expert_margin() {
        // one small step on the conservative term alone
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = ParamSet::init(&[5, 16, 16, 1], Activation::Relu, &mut rng);
        let s = Array2::from_shape_fn((1, 3), |(_, j)| j as f64 * 0.2 - 0.1);
        let a_n = ndarray::array![[0.7, -0.2]];
        let a_h = ndarray::array![[-0.4, 0.5]];
        let gap = |q: &ParamSet| {
            losses::q_values(q, s.view(), a_n.view()).unwrap()[0]
                - losses::q_values(q, s.view(), a_h.view()).unwrap()[0]
        };
        // zero-weight TD: with y = Q(s, â) the TD gradient vanishes
        let y = losses::q_values(&q, s.view(), a_h.view()).unwrap();
        let l = losses::proxy_q_loss(
            &q,
            s.view(),
            a_h.view(),
            a_n.view(),
            a_h.view(),
            &[true],
            y.view(),
            10.0,
        )
        .unwrap();
        let mut stepped = q.clone();
        let mut g = l.grads.clone();
        g.scale(-1e-4);
        stepped.add_assign(&g);
        assert!(gap(&stepped) < gap(&q));
    }
}
