//! Runs, baselines, ablations, evaluation and exports.

pub mod config;
pub mod demos;
pub mod eval;
pub mod heatmap;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{generate_map, Difficulty, EnvConfig, EnvError, MapSpec};
use crate::guardian::{Counting, FixedGuardian, Guardian, ScriptedGuardian};
use crate::learner::training::RewardUse;
use crate::learner::training::{Collector, TrainingObserver};
use crate::learner::{bc, run_training, CostKind, EpisodeMetrics, LearnerState, TrainError, TrainingSetup, Transition};
use crate::numeric::{Checkpoint, CheckpointError, NumericError};

pub use config::{Mode, RunConfig, OUTPUT_ROOT_VAR};
pub use demos::{record_demonstrations, DemoLog, DemoRecord};
pub use eval::{evaluate, EvalPolicy, EvalResult, EvalRow};
pub use heatmap::{export_q_heatmap, heatmap_csv, HeatCell};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const EVAL_HISTORY_FILE: &str = "eval_history.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const DEMOS_FILE: &str = "demos.jsonl";

pub fn build_maps(seeds: &[u64], difficulty: &Difficulty, env_cfg: &EnvConfig) -> Result<Vec<Arc<MapSpec>>, EnvError> {
    seeds
        .iter()
        .map(|&s| generate_map(s, difficulty, env_cfg).map(Arc::new))
        .collect()
}

/// One periodic evaluation during training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub iteration: usize,
    pub env_step: usize,
    pub success_rate: f64,
    pub mean_return: f64,
    pub mean_safety_violation: f64,
}

impl EvalPoint {
    pub const CSV_HEADER: &'static str = "iteration,env_step,success_rate,mean_return,mean_safety_violation";

    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.iteration, self.env_step, self.success_rate, self.mean_return, self.mean_safety_violation
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub config_hash: String,
    pub total_steps: usize,
    pub episodes: usize,
    pub takeover_steps: usize,
    pub safety_violations: u64,
    pub degenerate_costs: usize,
    pub stopped_early: Option<String>,
    pub final_success_rate: f64,
    pub final_mean_return: f64,
    pub final_mean_safety_violation: f64,
    pub best_success_rate: f64,
    /// First evaluated step with success at or above 0.7.
    pub first_step_success_0_7: Option<usize>,
    /// Guardian queries made while evaluating; 0 by construction.
    pub guardian_queries_during_eval: u64,
}

/// In-memory results of [`run`]; the same data is on disk in `dir`.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub dir: PathBuf,
    pub summary: RunSummary,
    pub learner: LearnerState,
    pub episodes: Vec<EpisodeMetrics>,
    pub eval_history: Vec<EvalPoint>,
    pub final_eval: EvalResult,
}

struct Sink<'a> {
    metrics: BufWriter<File>,
    history: BufWriter<File>,
    test_maps: &'a [Arc<MapSpec>],
    cfg: &'a RunConfig,
    points: Vec<EvalPoint>,
    guardian_queries: Arc<AtomicU64>,
    eval_queries: u64,
    error: Option<std::io::Error>,
}

impl Sink<'_> {
    fn record<T>(&mut self, r: std::io::Result<T>) {
        if let Err(e) = r {
            self.error.get_or_insert(e);
        }
    }
}

impl TrainingObserver for Sink<'_> {
    fn on_episode(&mut self, m: &EpisodeMetrics) {
        let r = writeln!(self.metrics, "{}", m.csv_row());
        self.record(r);
    }

    fn on_iteration(&mut self, iteration: usize, env_step: usize, learner: &LearnerState) {
        if self.cfg.eval_every == 0 || iteration % self.cfg.eval_every != 0 {
            return;
        }
        let before = self.guardian_queries.load(Ordering::Relaxed);
        let r = evaluate(
            &mut EvalPolicy::Learner(learner),
            self.test_maps,
            &self.cfg.env,
            self.cfg.eval_episodes_per_map,
        );
        self.eval_queries += self.guardian_queries.load(Ordering::Relaxed) - before;
        let p = EvalPoint {
            iteration,
            env_step,
            success_rate: r.success_rate,
            mean_return: r.mean_return,
            mean_safety_violation: r.mean_safety_violation,
        };
        log::info!(
            "iteration {iteration} step {env_step}: success {:.2} return {:.1} violations {:.2}",
            p.success_rate,
            p.mean_return,
            p.mean_safety_violation
        );
        let w = writeln!(self.history, "{}", p.csv_row());
        self.record(w);
        self.points.push(p);
    }
}

fn create(dir: &Path, name: &str, header: &str) -> Result<BufWriter<File>, HarnessError> {
    let mut w = BufWriter::new(File::create(dir.join(name))?);
    writeln!(w, "{header}")?;
    Ok(w)
}

/// Executes the configured mode and writes every artifact to the resolved
/// output directory.
pub fn run(cfg: &RunConfig) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let train_cfg = cfg.effective_train();
    let train_maps = build_maps(&cfg.train_seeds, &cfg.difficulty, &cfg.env)?;
    let test_maps = build_maps(&cfg.test_seeds, &cfg.difficulty, &cfg.env)?;
    let dir = cfg.resolved_output_dir();
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join(CONFIG_FILE), cfg.to_toml())?;
    let hash = cfg.hash();

    let guardian_cfg = cfg.effective_guardian();
    let inner: Box<dyn Guardian> = match cfg.mode {
        Mode::UnguardedRl => Box::new(FixedGuardian::Never),
        _ => Box::new(ScriptedGuardian::new(guardian_cfg)),
    };
    let mut guardian = Counting::new(inner);
    let mut sink = Sink {
        metrics: create(&dir, METRICS_FILE, EpisodeMetrics::CSV_HEADER)?,
        history: create(&dir, EVAL_HISTORY_FILE, EvalPoint::CSV_HEADER)?,
        test_maps: &test_maps,
        cfg,
        points: Vec::new(),
        guardian_queries: guardian.counter(),
        eval_queries: 0,
        error: None,
    };

    let learner = LearnerState::new(cfg.env.obs_dim(), &train_cfg, cfg.seed);
    let (learner, episodes, totals) = if cfg.mode == Mode::BehaviorCloning {
        let log = record_demonstrations(&mut guardian, &cfg.env, &train_maps, cfg.demo_steps);
        log.write(BufWriter::new(File::create(dir.join(DEMOS_FILE))?))?;
        let learner = fit_behavior_cloning(learner, &log, cfg)?;
        (learner, Vec::new(), (0, 0, 0, 0, None))
    } else {
        let setup = TrainingSetup {
            env_cfg: cfg.env,
            train_maps: train_maps.clone(),
            total_steps: cfg.total_steps,
            cost_kind: match cfg.mode {
                Mode::HacoAblationB => CostKind::Constant,
                _ => CostKind::Cosine,
            },
            reward_use: match cfg.mode {
                Mode::UnguardedRl => RewardUse::Shaped {
                    cost_weight: cfg.unguarded_cost_weight,
                },
                _ => RewardUse::Ignored,
            },
            zero_reward: cfg.zero_reward,
            seed: cfg.seed,
        };
        let out = run_training(learner, &mut guardian, &setup, &train_cfg, &mut sink);
        let totals = (
            out.total_steps,
            out.takeover_steps,
            out.safety_violations,
            out.degenerate_costs,
            out.stopped_early,
        );
        (out.trainer.learner, out.episodes, totals)
    };
    sink.metrics.flush()?;
    sink.history.flush()?;
    if let Some(e) = sink.error.take() {
        return Err(e.into());
    }

    learner.to_checkpoint(&hash).save(&dir.join(CHECKPOINT_FILE))?;
    let before = guardian.queries();
    let final_eval = evaluate(
        &mut EvalPolicy::Learner(&learner),
        &test_maps,
        &cfg.env,
        cfg.eval_episodes_per_map,
    );
    let eval_queries = sink.eval_queries + guardian.queries() - before;
    std::fs::write(dir.join(EVAL_FILE), final_eval.to_csv())?;

    let points = std::mem::take(&mut sink.points);
    let (total_steps, takeover_steps, safety_violations, degenerate_costs, stopped_early) = totals;
    let summary = RunSummary {
        mode: cfg.mode,
        config_hash: hash,
        total_steps,
        episodes: episodes.len(),
        takeover_steps,
        safety_violations,
        degenerate_costs,
        stopped_early,
        final_success_rate: final_eval.success_rate,
        final_mean_return: final_eval.mean_return,
        final_mean_safety_violation: final_eval.mean_safety_violation,
        best_success_rate: points
            .iter()
            .map(|p| p.success_rate)
            .fold(final_eval.success_rate, f64::max),
        first_step_success_0_7: points.iter().find(|p| p.success_rate >= 0.7).map(|p| p.env_step),
        guardian_queries_during_eval: eval_queries,
    };
    std::fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?)?;
    Ok(RunReport {
        dir,
        summary,
        learner,
        episodes,
        eval_history: points,
        final_eval,
    })
}

fn fit_behavior_cloning(
    mut learner: LearnerState,
    log: &DemoLog,
    cfg: &RunConfig,
) -> Result<LearnerState, HarnessError> {
    let n = log.records.len();
    let dim = cfg.env.obs_dim();
    let obs = Array2::from_shape_fn((n, dim), |(i, j)| log.records[i].obs[j]);
    let actions = Array2::from_shape_fn((n, 2), |(i, j)| log.records[i].action[j]);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x4243);
    let LearnerState { policy, policy_opt, .. } = &mut learner;
    bc::fit(policy, policy_opt, &obs, &actions, &cfg.bc, &mut rng)?;
    Ok(learner)
}

/// Loads a checkpoint, checks it against `expected_hash` when given, and
/// evaluates its mean action on the given maps without any guardian.
pub fn evaluate_checkpoint(
    path: &Path,
    expected_hash: Option<&str>,
    maps: &[Arc<MapSpec>],
    env_cfg: &EnvConfig,
    episodes_per_map: usize,
) -> Result<EvalResult, HarnessError> {
    let learner = LearnerState::from_checkpoint(&Checkpoint::load(path)?, expected_hash)?;
    if learner.obs_dim() != env_cfg.obs_dim() {
        return Err(HarnessError::Config(format!(
            "checkpoint expects {} observation values, environment produces {}",
            learner.obs_dim(),
            env_cfg.obs_dim()
        )));
    }
    Ok(evaluate(
        &mut EvalPolicy::Learner(&learner),
        maps,
        env_cfg,
        episodes_per_map,
    ))
}

/// Runs the stochastic policy under the guardian until `count` takeover
/// transitions are gathered or `max_steps` pass. Nothing is trained.
pub fn collect_intervened<G: Guardian + ?Sized>(
    learner: &LearnerState,
    guardian: &mut G,
    env_cfg: &EnvConfig,
    maps: &[Arc<MapSpec>],
    count: usize,
    max_steps: usize,
    seed: u64,
) -> Result<Vec<Transition>, HarnessError> {
    let mut collector = Collector::new(*env_cfg, maps.to_vec(), CostKind::Cosine, true);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    guardian.reset();
    for _ in 0..max_steps {
        if out.len() >= count {
            break;
        }
        let a_n = learner.act(collector.observation(), &mut rng)?;
        let env = collector.env();
        let map = env.map().expect("collector always has a map").clone();
        let decision = guardian.decide(env.ego(), a_n, &map, env.config());
        let step = collector.step(a_n, decision)?;
        if step.transition.intervened {
            out.push(step.transition);
        }
        if step.finished.is_some() {
            collector.next_episode();
            guardian.reset();
        }
    }
    Ok(out)
}
