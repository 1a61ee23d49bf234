//! The training-risk bound of the supervised behavior policy and its
//! Monte Carlo check.
//!
//! With expert error rate ε, intervention miss rate κ and tolerance K′,
//! the expected discounted count of unsafe steps under the mixed policy is
//! at most `(ε + κ + γ·ε²·K′/(1 − γ)) / (1 − γ)`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{DrivingEnv, EnvConfig, MapSpec};
use crate::guardian::{
    apply_noise, estimate_tolerance, guarded_step, Guardian, GuardianConfig, NoiseConfig, ScriptedGuardian,
    ToleranceEstimate,
};

/// z-value of the two-sided 95% normal interval.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub epsilon: f64,
    pub kappa: f64,
    pub k_prime: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BoundError {
    #[error("gamma must lie in [0, 1), got {0}")]
    Gamma(f64),
    #[error("{0} must be a probability, got {1}")]
    Probability(&'static str, f64),
    #[error("K' must be non-negative, got {0}")]
    Tolerance(f64),
}

impl BoundInputs {
    pub fn validate(&self) -> Result<(), BoundError> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(BoundError::Gamma(self.gamma));
        }
        for (name, p) in [("epsilon", self.epsilon), ("kappa", self.kappa)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(BoundError::Probability(name, p));
            }
        }
        if !(self.k_prime >= 0.0) {
            return Err(BoundError::Tolerance(self.k_prime));
        }
        Ok(())
    }
}

/// `(ε + κ + γ·ε²·K′/(1 − γ)) / (1 − γ)`.
pub fn risk_bound(b: &BoundInputs) -> Result<f64, BoundError> {
    b.validate()?;
    let h = 1.0 / (1.0 - b.gamma);
    Ok(h * (b.epsilon + b.kappa + b.gamma * b.epsilon * b.epsilon * h * b.k_prime))
}

/// Mean and 95% half-width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Estimate {
                mean: 0.0,
                half_width: 0.0,
                n,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Estimate {
            mean,
            half_width: Z95 * (var / n as f64).sqrt(),
            n,
        }
    }
}

/// Agent side of a supervised rollout.
pub trait Agent {
    fn act(&mut self, obs: &[f64]) -> [f64; 2];
}

/// Uniform actions from a seeded stream.
#[derive(Clone, Debug)]
pub struct RandomAgent(pub ChaCha8Rng);

impl RandomAgent {
    pub fn new(seed: u64) -> Self {
        RandomAgent(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl Agent for RandomAgent {
    fn act(&mut self, _: &[f64]) -> [f64; 2] {
        [self.0.gen_range(-1.0..=1.0), self.0.gen_range(-1.0..=1.0)]
    }
}

impl<F: FnMut(&[f64]) -> [f64; 2]> Agent for F {
    fn act(&mut self, obs: &[f64]) -> [f64; 2] {
        self(obs)
    }
}

/// Discounted count of unsafe steps, `Σ_t γ^t · 1[step t entered an unsafe
/// state]`, per episode of the agent under the guardian, cycling through
/// `maps`.
pub fn empirical_discounted_failure<A: Agent + ?Sized, G: Guardian + ?Sized>(
    agent: &mut A,
    guardian: &mut G,
    env_cfg: &EnvConfig,
    maps: &[Arc<MapSpec>],
    gamma: f64,
    n_episodes: usize,
) -> Estimate {
    let mut env = DrivingEnv::new(*env_cfg);
    let mut per_episode = Vec::with_capacity(n_episodes);
    for ep in 0..n_episodes {
        let mut obs = env.reset(maps[ep % maps.len()].clone());
        guardian.reset();
        let mut discount = 1.0;
        let mut v = 0.0;
        while env.is_active() {
            let a = agent.act(&obs);
            let Ok(step) = guarded_step(a, guardian, &mut env) else {
                break;
            };
            if step.result.unsafe_event() {
                v += discount;
            }
            discount *= gamma;
            obs = step.result.observation;
        }
        per_episode.push(v);
    }
    Estimate::from_samples(&per_episode)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub noise: NoiseConfig,
    pub tolerance: ToleranceEstimate,
    pub bound: f64,
    pub empirical: Estimate,
    /// Upper confidence limit within the bound.
    pub pass: bool,
    /// Lower confidence limit within the bound: the bound is not violated
    /// beyond the Monte Carlo interval.
    pub consistent: bool,
}

impl RiskReport {
    pub const CSV_HEADER: &'static str =
        "epsilon,kappa_lapse,epsilon_hat,kappa_hat,k_prime_hat,bound,v_hat,half_width,episodes,pass,consistent";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.noise.epsilon,
            self.noise.kappa_lapse,
            self.tolerance.epsilon_hat,
            self.tolerance.kappa_hat,
            self.tolerance.k_prime_hat,
            self.bound,
            self.empirical.mean,
            self.empirical.half_width,
            self.empirical.n,
            self.pass,
            self.consistent
        )
    }
}

/// Sizes of the Monte Carlo samples used by [`verify_bound`].
///
/// The expert errs on the order of once per thousand steps, so the state
/// sample has to be large for `epsilon_hat` to resolve it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifySettings {
    pub gamma: f64,
    pub n_episodes: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub seed: u64,
}

impl Default for VerifySettings {
    fn default() -> Self {
        VerifySettings {
            gamma: 0.99,
            n_episodes: 200,
            n_states: 10_000,
            n_actions: 32,
            seed: 0,
        }
    }
}

/// For every noise configuration: wrap the scripted guardian, estimate the
/// tolerances, evaluate the bound and measure a random agent under it.
pub fn verify_bound(
    configs: &[NoiseConfig],
    guardian_cfg: &GuardianConfig,
    env_cfg: &EnvConfig,
    maps: &[Arc<MapSpec>],
    settings: &VerifySettings,
) -> Result<Vec<RiskReport>, BoundError> {
    configs
        .iter()
        .enumerate()
        .map(|(i, noise)| {
            let seed = settings.seed.wrapping_add(i as u64 * 0x9e37_79b9);
            let mut estimator = apply_noise(ScriptedGuardian::new(*guardian_cfg), NoiseConfig { seed, ..*noise });
            let tolerance = estimate_tolerance(
                &mut estimator,
                env_cfg,
                maps,
                settings.n_states,
                settings.n_actions,
                seed ^ 1,
            );
            let bound = risk_bound(&BoundInputs {
                epsilon: tolerance.epsilon_hat,
                kappa: tolerance.kappa_hat,
                k_prime: tolerance.k_prime_hat,
                gamma: settings.gamma,
            })?;
            let mut guardian = apply_noise(
                ScriptedGuardian::new(*guardian_cfg),
                NoiseConfig {
                    seed: seed ^ 2,
                    ..*noise
                },
            );
            let mut agent = RandomAgent::new(seed ^ 3);
            let empirical = empirical_discounted_failure(
                &mut agent,
                &mut guardian,
                env_cfg,
                maps,
                settings.gamma,
                settings.n_episodes,
            );
            Ok(RiskReport {
                noise: *noise,
                tolerance,
                bound,
                empirical,
                pass: empirical.mean + empirical.half_width <= bound,
                consistent: empirical.mean - empirical.half_width <= bound,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_map, Difficulty, Segment};
    use crate::guardian::FixedGuardian;

    fn b(epsilon: f64, kappa: f64, k_prime: f64, gamma: f64) -> BoundInputs {
        BoundInputs {
            epsilon,
            kappa,
            k_prime,
            gamma,
        }
    }

    #[test]
    fn bound_hand_values() {
        assert!((risk_bound(&b(0.01, 0.05, 2.0, 0.99)).unwrap() - 7.98).abs() < 1e-9);
        assert_eq!(risk_bound(&b(0.0, 0.0, 3.0, 0.99)).unwrap(), 0.0);
        assert!((risk_bound(&b(0.2, 0.1, 4.0, 1e-12)).unwrap() - 0.3).abs() < 1e-9);
        assert!(risk_bound(&b(0.1, 0.1, 1.0, 1.0)).is_err());
    }

    #[test]
    fn bound_is_monotone() {
        let grid = [0.0, 0.05, 0.2, 0.6];
        let gammas = [0.0, 0.5, 0.9, 0.99];
        let ks = [0.0, 0.5, 2.0, 4.0];
        for &e in &grid {
            for &k in &grid {
                for &kp in &ks {
                    for (gi, &g) in gammas.iter().enumerate() {
                        let v = risk_bound(&b(e, k, kp, g)).unwrap();
                        let up = |x: BoundInputs| risk_bound(&x).unwrap() >= v;
                        assert!(up(b(e + 0.1, k, kp, g)));
                        assert!(up(b(e, k + 0.1, kp, g)));
                        assert!(up(b(e, k, kp + 0.5, g)));
                        if gi + 1 < gammas.len() {
                            assert!(up(b(e, k, kp, gammas[gi + 1])));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn estimate_interval() {
        let e = Estimate::from_samples(&[1.0, 3.0]);
        assert_eq!(e.mean, 2.0);
        assert!((e.half_width - Z95 * (2.0f64 / 2.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn safe_agent_on_empty_map_never_fails() {
        let map =
            Arc::new(MapSpec::from_parts(0, vec![Segment::Straight { length: 60.0 }], 3, 4.0, Vec::new()).unwrap());
        let cfg = EnvConfig::default();
        let mut agent = |_: &[f64]| [0.0, 0.6];
        let e = empirical_discounted_failure(&mut agent, &mut FixedGuardian::Never, &cfg, &[map], 0.99, 3);
        assert_eq!(e.mean, 0.0);
    }

    #[test]
    fn off_road_agent_fails() {
        let map =
            Arc::new(MapSpec::from_parts(0, vec![Segment::Straight { length: 200.0 }], 3, 4.0, Vec::new()).unwrap());
        let cfg = EnvConfig::default();
        let mut agent = |_: &[f64]| [1.0, 1.0];
        let e = empirical_discounted_failure(&mut agent, &mut FixedGuardian::Never, &cfg, &[map], 0.99, 2);
        assert!(e.mean > 0.0 && e.mean <= 1.0);
    }

    #[test]
    fn always_intervening_bound_collapses() {
        let cfg = EnvConfig::default();
        let maps: Vec<_> = (0..2)
            .map(|s| Arc::new(generate_map(s, &Difficulty::default(), &cfg).unwrap()))
            .collect();
        let t = estimate_tolerance(&mut FixedGuardian::Always, &cfg, &maps, 20, 16, 0);
        let full = risk_bound(&b(t.epsilon_hat, t.kappa_hat, t.k_prime_hat, 0.99)).unwrap();
        assert!((full - (t.epsilon_hat + t.kappa_hat) * 100.0).abs() < 1e-9);
    }
}
