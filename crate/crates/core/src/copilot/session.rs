//! Transport-free tick engine shared by live sessions and replays.

use std::io::{BufRead, Write};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::guardian::GuardianDecision;
use crate::harness::{build_maps, HarnessError, Mode, RunConfig};
use crate::learner::training::{Collector, RewardUse, Trainer};
use crate::learner::{CostKind, LearnerState};

use super::protocol::{EpisodeStats, FrameMsg, InputMsg, PROTOCOL_VERSION};

pub const SESSION_LOG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub v: u32,
    pub kind: String,
    pub protocol: u32,
    pub config_hash: String,
}

/// One tick: what the console saw and sent, what was applied, and how many
/// learner iterations ran before the next tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionEntry {
    pub tick: u64,
    pub frame_digest: String,
    /// Input in force for this tick, after clamping.
    pub input: InputMsg,
    pub a_n: [f64; 2],
    pub applied: [f64; 2],
    pub rising_cost: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionLog {
    pub header: SessionHeader,
    pub entries: Vec<SessionEntry>,
}

impl SessionLog {
    pub fn new(config_hash: &str) -> Self {
        SessionLog {
            header: SessionHeader {
                v: SESSION_LOG_VERSION,
                kind: "session".into(),
                protocol: PROTOCOL_VERSION,
                config_hash: config_hash.into(),
            },
            entries: Vec::new(),
        }
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), HarnessError> {
        write_line(&mut w, &self.header)?;
        for e in &self.entries {
            write_line(&mut w, e)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self, HarnessError> {
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or_else(|| HarnessError::Format("empty session log".into()))??;
        let header: SessionHeader = serde_json::from_str(&first)?;
        if header.v != SESSION_LOG_VERSION || header.kind != "session" {
            return Err(HarnessError::Format(format!(
                "unsupported session log ({} v{})",
                header.kind, header.v
            )));
        }
        let mut entries = Vec::new();
        for line in lines {
            let line = line?;
            if !line.trim().is_empty() {
                entries.push(serde_json::from_str(&line)?);
            }
        }
        Ok(SessionLog { header, entries })
    }
}

pub(crate) fn write_line<W: Write, T: Serialize>(w: &mut W, v: &T) -> Result<(), HarnessError> {
    serde_json::to_writer(&mut *w, v)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Whether an offered input was taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputVerdict {
    Accepted,
    /// Acknowledges a frame older than the previous tick.
    Stale,
    /// Older than the input already held for this tick.
    Superseded,
}

/// Alg. 1 bookkeeping driven one tick at a time by an external guardian.
pub struct Session {
    hash: String,
    collector: Collector,
    trainer: Trainer,
    act_rng: ChaCha8Rng,
    tick: u64,
    held: InputMsg,
    /// Agent action and digest of the first frame shown for this tick.
    proposed: Option<([f64; 2], String)>,
    pending: usize,
    open: Option<SessionEntry>,
    entries: Vec<SessionEntry>,
}

impl Session {
    /// Guardian-driven modes only; the guardian is whoever sends inputs.
    pub fn new(cfg: &RunConfig) -> Result<Self, HarnessError> {
        cfg.validate()?;
        if matches!(cfg.mode, Mode::UnguardedRl | Mode::BehaviorCloning) {
            return Err(HarnessError::Config(format!(
                "mode {} has no live guardian",
                cfg.mode.name()
            )));
        }
        let maps = build_maps(&cfg.train_seeds, &cfg.difficulty, &cfg.env)?;
        let train = cfg.effective_train();
        let cost = match cfg.mode {
            Mode::HacoAblationB => CostKind::Constant,
            _ => CostKind::Cosine,
        };
        let learner = LearnerState::new(cfg.env.obs_dim(), &train, cfg.seed);
        Ok(Session {
            hash: cfg.hash(),
            collector: Collector::new(cfg.env, maps, cost, cfg.zero_reward),
            trainer: Trainer::new(learner, train, RewardUse::Ignored),
            act_rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x434f_5049_4c4f),
            tick: 0,
            held: InputMsg::default(),
            proposed: None,
            pending: 0,
            open: None,
            entries: Vec::new(),
        })
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn held_input(&self) -> InputMsg {
        self.held
    }

    pub fn env(&self) -> &crate::env::DrivingEnv {
        self.collector.env()
    }

    pub fn trainer(&self) -> &Trainer {
        &self.trainer
    }

    pub fn pending_iterations(&self) -> usize {
        self.pending
    }

    fn stats(&self) -> EpisodeStats {
        let (step_count, takeover_rate, cost) = self.collector.episode_stats();
        EpisodeStats {
            episode: self.collector.episode(),
            step_count,
            takeover_rate,
            episodic_intervention_cost: cost,
        }
    }

    fn frame_with(&self, a_n: [f64; 2]) -> FrameMsg {
        let env = self.collector.env();
        let map = env.map().expect("collector always has a map");
        FrameMsg::build(
            self.tick,
            env.ego(),
            map,
            env.config(),
            a_n,
            self.held.takeover,
            self.stats(),
        )
    }

    /// Frame for the current tick; samples the agent's action on first call.
    pub fn frame(&mut self) -> Result<FrameMsg, HarnessError> {
        if let Some((a_n, _)) = self.proposed {
            return Ok(self.frame_with(a_n));
        }
        let a_n = self
            .trainer
            .learner
            .act(self.collector.observation(), &mut self.act_rng)?;
        let frame = self.frame_with(a_n);
        self.proposed = Some((a_n, frame.digest()));
        Ok(frame)
    }

    /// Freshest input wins; inputs acknowledging a frame before the previous
    /// tick are dropped and the held input stays in force.
    pub fn offer_input(&mut self, input: InputMsg) -> InputVerdict {
        if input.tick + 1 < self.tick {
            return InputVerdict::Stale;
        }
        if input.tick < self.held.tick {
            return InputVerdict::Superseded;
        }
        self.held = input.clamped();
        InputVerdict::Accepted
    }

    /// Applies the held input (takeover → expert action, else the agent's
    /// proposal) and advances one environment step.
    pub fn advance(&mut self) -> Result<&SessionEntry, HarnessError> {
        self.frame()?;
        let (a_n, digest) = self.proposed.take().expect("frame sets the proposal");
        self.step_with(a_n, digest)
    }

    fn step_with(&mut self, a_n: [f64; 2], frame_digest: String) -> Result<&SessionEntry, HarnessError> {
        self.close_entry();
        let decision = GuardianDecision {
            intervene: self.held.takeover,
            expert_action: self.held.takeover.then(|| self.held.action()),
        };
        let step = self.collector.step(a_n, decision)?;
        self.trainer.push(&step);
        if self.trainer.due() {
            self.pending += 1;
        }
        if step.finished.is_some() {
            self.collector.next_episode();
        }
        let entry = SessionEntry {
            tick: self.tick,
            frame_digest,
            input: self.held,
            a_n: step.transition.a_n,
            applied: step.applied,
            rising_cost: step.transition.rising_cost,
            iterations: 0,
        };
        self.tick += 1;
        Ok(self.open.insert(entry))
    }

    /// Runs due learner iterations until `budget` is spent (all of them
    /// when `None`); the rest wait for later ticks. Returns how many ran.
    pub fn run_updates(&mut self, budget: Option<Duration>) -> Result<usize, HarnessError> {
        let start = Instant::now();
        let mut ran = 0;
        while self.pending > 0 && budget.map_or(true, |b| start.elapsed() < b) {
            self.trainer.train_once()?;
            self.pending -= 1;
            ran += 1;
        }
        if let Some(e) = self.open.as_mut() {
            e.iterations += ran;
        }
        Ok(ran)
    }

    fn close_entry(&mut self) {
        if let Some(e) = self.open.take() {
            self.entries.push(e);
        }
    }

    /// Entries completed since the last drain.
    pub fn drain_entries(&mut self) -> Vec<SessionEntry> {
        std::mem::take(&mut self.entries)
    }

    /// Closes the last tick and returns the remaining entries with the
    /// final learner.
    pub fn finish(mut self) -> (Vec<SessionEntry>, Trainer) {
        self.close_entry();
        (self.entries, self.trainer)
    }
}

/// Rebuilds the transition stream and updates of a recorded session.
pub fn replay_session(log: &SessionLog, cfg: &RunConfig) -> Result<Trainer, HarnessError> {
    if log.header.v != SESSION_LOG_VERSION {
        return Err(HarnessError::Format(format!(
            "unsupported session log version {}",
            log.header.v
        )));
    }
    let hash = cfg.hash();
    if log.header.config_hash != hash {
        return Err(HarnessError::Config(format!(
            "session was recorded with config {}, this config is {hash}",
            log.header.config_hash
        )));
    }
    let mut s = Session::new(cfg)?;
    for (i, e) in log.entries.iter().enumerate() {
        let mismatch = |what: &str| HarnessError::Format(format!("entry {i} (tick {}): {what} does not match", e.tick));
        if e.tick != s.tick {
            return Err(mismatch("tick"));
        }
        if s.frame_with(e.a_n).digest() != e.frame_digest {
            return Err(mismatch("frame digest"));
        }
        s.held = e.input.clamped();
        let got = s.step_with(e.a_n, e.frame_digest.clone())?.clone();
        if got.applied != e.applied || got.rising_cost.to_bits() != e.rising_cost.to_bits() {
            return Err(mismatch("applied action or cost"));
        }
        if e.iterations > s.pending {
            return Err(mismatch("update schedule"));
        }
        for _ in 0..e.iterations {
            s.trainer.train_once()?;
        }
        s.pending -= e.iterations;
    }
    Ok(s.finish().1)
}
