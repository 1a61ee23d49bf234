use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{split_seeds, Difficulty, EnvConfig};
use crate::guardian::GuardianConfig;
use crate::learner::bc::BcConfig;
use crate::learner::TrainConfig;

use super::HarnessError;

/// Environment variable that relative output directories resolve against.
pub const OUTPUT_ROOT_VAR: &str = "HACO_OUTPUT_ROOT";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Haco,
    /// Long, infrequent takeovers.
    HacoAblationA,
    /// Constant cost on every takeover instead of the cosine cost.
    HacoAblationB,
    /// Policy ignores the intervention value.
    HacoAblationC,
    /// No guardian; reward-shaped entropy-regularized RL.
    UnguardedRl,
    /// Maximum likelihood on recorded guardian demonstrations.
    BehaviorCloning,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Haco,
        Mode::HacoAblationA,
        Mode::HacoAblationB,
        Mode::HacoAblationC,
        Mode::UnguardedRl,
        Mode::BehaviorCloning,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Haco => "haco",
            Mode::HacoAblationA => "haco-ablation-a",
            Mode::HacoAblationB => "haco-ablation-b",
            Mode::HacoAblationC => "haco-ablation-c",
            Mode::UnguardedRl => "unguarded-rl",
            Mode::BehaviorCloning => "behavior-cloning",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// Everything one run needs. Unknown keys in a config file are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub total_steps: usize,
    pub train_seeds: Vec<u64>,
    pub test_seeds: Vec<u64>,
    /// Evaluate every this many training iterations; 0 disables.
    pub eval_every: usize,
    pub eval_episodes_per_map: usize,
    /// Minimum takeover length in the sparse-takeover ablation.
    pub sparse_takeover_steps: usize,
    /// Weight of env cost subtracted from the reward in unguarded-rl.
    pub unguarded_cost_weight: f64,
    /// Standard `−|A|` entropy target for the unguarded baseline.
    pub unguarded_conventional_entropy: bool,
    /// Demonstration transitions recorded for behavior-cloning.
    pub demo_steps: usize,
    /// Replace every env reward with 0 before anything else sees it.
    /// Not part of the config hash.
    pub zero_reward: bool,
    /// Not part of the config hash.
    pub output_dir: PathBuf,
    pub env: EnvConfig,
    pub difficulty: Difficulty,
    pub guardian: GuardianConfig,
    pub train: TrainConfig,
    pub bc: BcConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let (train_seeds, test_seeds) = split_seeds(20, 20, 0);
        RunConfig {
            mode: Mode::Haco,
            seed: 0,
            total_steps: 30_000,
            train_seeds,
            test_seeds,
            eval_every: 10,
            eval_episodes_per_map: 2,
            sparse_takeover_steps: 30,
            unguarded_cost_weight: 1.0,
            unguarded_conventional_entropy: true,
            demo_steps: 10_000,
            zero_reward: false,
            output_dir: PathBuf::from("runs/haco"),
            env: EnvConfig::default(),
            difficulty: Difficulty::default(),
            guardian: GuardianConfig::default(),
            train: TrainConfig::default(),
            bc: BcConfig::default(),
        }
    }
}

impl RunConfig {
    /// Small networks and batches that train in minutes on one core.
    pub fn desk(mode: Mode) -> Self {
        RunConfig {
            mode,
            output_dir: PathBuf::from(format!("runs/{}", mode.name())),
            train: TrainConfig {
                hidden: vec![64, 64],
                batch_size: 128,
                ..TrainConfig::default()
            },
            ..RunConfig::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.train.validate().map_err(HarnessError::Config)?;
        if self.train_seeds.is_empty() || self.test_seeds.is_empty() {
            return bad("train and test seed lists must be non-empty".into());
        }
        let train: BTreeSet<_> = self.train_seeds.iter().collect();
        if let Some(s) = self.test_seeds.iter().find(|s| train.contains(s)) {
            return bad(format!("seed {s} is in both the train and test lists"));
        }
        if self.mode != Mode::BehaviorCloning && self.total_steps <= self.train.learning_starts {
            return bad(format!(
                "total_steps {} must exceed learning_starts {}",
                self.total_steps, self.train.learning_starts
            ));
        }
        if self.eval_episodes_per_map == 0 {
            return bad("eval_episodes_per_map must be at least 1".into());
        }
        if !(self.unguarded_cost_weight >= 0.0) {
            return bad("unguarded_cost_weight must be non-negative".into());
        }
        if self.mode == Mode::HacoAblationA && self.sparse_takeover_steps < 2 {
            return bad("sparse_takeover_steps must be at least 2".into());
        }
        if self.env.horizon == 0 || !(self.env.dt > 0.0) {
            return bad("env horizon and dt must be positive".into());
        }
        Ok(())
    }

    /// Hex sha256 of the canonical JSON form, without the output directory
    /// and the reward-zeroing switch.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.zero_reward = false;
        let json = serde_json::to_vec(&c).expect("run config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Output directory, resolved against the output root variable when
    /// relative.
    pub fn resolved_output_dir(&self) -> PathBuf {
        if self.output_dir.is_absolute() {
            return self.output_dir.clone();
        }
        match std::env::var_os(OUTPUT_ROOT_VAR) {
            Some(root) => PathBuf::from(root).join(&self.output_dir),
            None => self.output_dir.clone(),
        }
    }

    /// Guardian settings for the selected mode.
    pub fn effective_guardian(&self) -> GuardianConfig {
        match self.mode {
            Mode::HacoAblationA => GuardianConfig {
                min_takeover_duration: self.sparse_takeover_steps,
                ..self.guardian
            },
            _ => self.guardian,
        }
    }

    /// Learner settings for the selected mode.
    pub fn effective_train(&self) -> TrainConfig {
        match self.mode {
            Mode::HacoAblationC => TrainConfig {
                use_qint_in_policy: false,
                ..self.train.clone()
            },
            Mode::UnguardedRl => TrainConfig {
                conventional_entropy: self.train.conventional_entropy || self.unguarded_conventional_entropy,
                ..self.train.clone()
            },
            _ => self.train.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::desk(Mode::HacoAblationB);
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn partial_toml_takes_defaults() {
        let cfg = RunConfig::from_toml("mode = \"unguarded-rl\"\ntotal_steps = 500\n[train]\nlr = 0.001\n").unwrap();
        assert_eq!(cfg.mode, Mode::UnguardedRl);
        assert_eq!(cfg.train.lr, 1e-3);
        assert_eq!(cfg.train.gamma, 0.99);
        assert_eq!(cfg.test_seeds.len(), 20);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(RunConfig::from_toml("mode = \"nonsense\"").is_err());
        assert!(RunConfig::from_toml("typo_key = 1").is_err());
        assert!(RunConfig::from_toml("train_seeds = [1, 2]\ntest_seeds = [2, 3]").is_err());
        assert!(RunConfig::from_toml("total_steps = 50").is_err());
        assert!(RunConfig::from_toml("[train]\ngamma = 1.0").is_err());
    }

    #[test]
    fn hash_ignores_output_and_reward_zeroing() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        b.zero_reward = true;
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(Mode::parse(m.name()), Some(m));
            let t = toml::to_string(&RunConfig {
                mode: m,
                ..Default::default()
            })
            .unwrap();
            assert!(t.contains(&format!("mode = \"{}\"", m.name())));
        }
    }

    #[test]
    fn ablation_overrides() {
        let a = RunConfig::desk(Mode::HacoAblationA);
        assert_eq!(a.effective_guardian().min_takeover_duration, 30);
        assert!(
            !RunConfig::desk(Mode::HacoAblationC)
                .effective_train()
                .use_qint_in_policy
        );
        assert!(RunConfig::desk(Mode::Haco).effective_train().use_qint_in_policy);
    }
}
