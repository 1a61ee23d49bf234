use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{DrivingEnv, EnvConfig, MapSpec};
use crate::guardian::expert_action;
use crate::learner::LearnerState;

/// What drives during evaluation. There is no guardian here by design.
pub enum EvalPolicy<'a> {
    /// Mean action of the learned policy.
    Learner(&'a LearnerState),
    /// The scripted expert driving alone.
    Expert,
    Fn(&'a mut dyn FnMut(&[f64]) -> [f64; 2]),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub map_seed: u64,
    pub episode: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    /// Collisions plus off-road exits.
    pub safety_violation: u64,
    pub success: bool,
    pub steps: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub rows: Vec<EvalRow>,
    pub mean_return: f64,
    pub mean_safety_violation: f64,
    pub success_rate: f64,
    /// Steps where the policy produced no finite action and the car coasted.
    pub policy_errors: usize,
}

impl EvalResult {
    pub const CSV_HEADER: &'static str = "map_seed,return,cost,success";

    pub fn from_rows(rows: Vec<EvalRow>, policy_errors: usize) -> Self {
        let n = rows.len().max(1) as f64;
        EvalResult {
            mean_return: rows.iter().map(|r| r.episode_return).sum::<f64>() / n,
            mean_safety_violation: rows.iter().map(|r| r.safety_violation as f64).sum::<f64>() / n,
            success_rate: rows.iter().filter(|r| r.success).count() as f64 / n,
            rows,
            policy_errors,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.map_seed, r.episode_return, r.safety_violation, r.success as u8
            ));
        }
        out
    }
}

/// Rolls the policy out on every map, `episodes_per_map` times each.
pub fn evaluate(
    policy: &mut EvalPolicy<'_>,
    maps: &[Arc<MapSpec>],
    env_cfg: &EnvConfig,
    episodes_per_map: usize,
) -> EvalResult {
    let mut env = DrivingEnv::new(*env_cfg);
    let mut rows = Vec::with_capacity(maps.len() * episodes_per_map);
    let mut errors = 0;
    for map in maps {
        for episode in 0..episodes_per_map {
            let mut obs = env.reset(map.clone());
            let mut row = EvalRow {
                map_seed: map.seed,
                episode,
                episode_return: 0.0,
                safety_violation: 0,
                success: false,
                steps: 0,
            };
            loop {
                let action = match policy {
                    EvalPolicy::Learner(l) => l.act_deterministic(&obs).unwrap_or_else(|_| {
                        errors += 1;
                        [0.0, 0.0]
                    }),
                    EvalPolicy::Expert => expert_action(env.ego(), map, env_cfg),
                    EvalPolicy::Fn(f) => f(&obs),
                };
                let Ok(r) = env.step(action) else { break };
                row.episode_return += r.reward;
                row.safety_violation += r.env_cost as u64 + r.out_of_road as u64;
                row.steps += 1;
                if r.terminal() {
                    row.success = r.success;
                    break;
                }
                obs = r.observation;
            }
            rows.push(row);
        }
    }
    EvalResult::from_rows(rows, errors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_map, Difficulty};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn maps(seeds: std::ops::Range<u64>) -> Vec<Arc<MapSpec>> {
        let cfg = EnvConfig::default();
        seeds
            .map(|s| Arc::new(generate_map(s, &Difficulty::default(), &cfg).unwrap()))
            .collect()
    }

    #[test]
    fn expert_succeeds() {
        let r = evaluate(
            &mut EvalPolicy::Expert,
            &maps(1_000_000..1_000_006),
            &EnvConfig::default(),
            1,
        );
        assert_eq!(r.success_rate, 1.0);
        assert_eq!(r.mean_safety_violation, 0.0);
    }

    #[test]
    fn zero_action_never_moves() {
        let mut f = |_: &[f64]| [0.0, 0.0];
        let r = evaluate(&mut EvalPolicy::Fn(&mut f), &maps(0..3), &EnvConfig::default(), 2);
        assert_eq!(r.rows.len(), 6);
        assert_eq!(r.success_rate, 0.0);
        assert_eq!(r.mean_safety_violation, 0.0);
        assert!(r.mean_return.abs() < 1e-12);
    }

    #[test]
    fn random_policy_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut f = |_: &[f64]| [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
        let r = evaluate(&mut EvalPolicy::Fn(&mut f), &maps(0..10), &EnvConfig::default(), 1);
        assert!(r.success_rate <= 0.1, "{}", r.success_rate);
    }

    #[test]
    fn aggregates_match_rows() {
        let rows = vec![
            EvalRow {
                map_seed: 1,
                episode: 0,
                episode_return: 2.0,
                safety_violation: 1,
                success: true,
                steps: 3,
            },
            EvalRow {
                map_seed: 2,
                episode: 0,
                episode_return: 4.0,
                safety_violation: 0,
                success: false,
                steps: 3,
            },
        ];
        let r = EvalResult::from_rows(rows, 0);
        assert_eq!(
            (r.mean_return, r.mean_safety_violation, r.success_rate),
            (3.0, 0.5, 0.5)
        );
        assert_eq!(r.to_csv(), "map_seed,return,cost,success\n1,2,1,1\n2,4,0,0\n");
    }
}
