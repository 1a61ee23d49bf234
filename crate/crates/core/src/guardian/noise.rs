use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Guardian, GuardianDecision};
use crate::env::{EgoState, EnvConfig, MapSpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Probability the expert emits a uniformly random action.
    pub epsilon: f64,
    /// Probability a firing intervention is suppressed.
    pub kappa_lapse: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            epsilon: 0.0,
            kappa_lapse: 0.0,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [("epsilon", self.epsilon), ("kappa_lapse", self.kappa_lapse)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} = {p} is not a probability"));
            }
        }
        Ok(())
    }
}

/// A guardian whose expert errs and whose interventions lapse.
///
/// Every query draws the same number of values from its own stream, so the
/// stream position depends only on the number of queries.
#[derive(Clone, Debug)]
pub struct Noisy<G> {
    pub inner: G,
    pub cfg: NoiseConfig,
    rng: ChaCha8Rng,
}

pub fn apply_noise<G: Guardian>(inner: G, cfg: NoiseConfig) -> Noisy<G> {
    Noisy {
        inner,
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    }
}

impl<G> Noisy<G> {
    fn perturb(&mut self, action: [f64; 2]) -> [f64; 2] {
        let u: f64 = self.rng.gen();
        let r = [self.rng.gen_range(-1.0..=1.0), self.rng.gen_range(-1.0..=1.0)];
        if u < self.cfg.epsilon {
            r
        } else {
            action
        }
    }

    fn lapse(&mut self) -> bool {
        self.rng.gen::<f64>() < self.cfg.kappa_lapse
    }
}

impl<G: Guardian> Guardian for Noisy<G> {
    fn reset(&mut self) {
        self.inner.reset()
    }

    fn expert(&mut self, state: &EgoState, map: &MapSpec, cfg: &EnvConfig) -> [f64; 2] {
        let a = self.inner.expert(state, map, cfg);
        self.perturb(a)
    }

    fn flags(&mut self, state: &EgoState, action: [f64; 2], map: &MapSpec, cfg: &EnvConfig) -> bool {
        let fires = self.inner.flags(state, action, map, cfg);
        let lapse = self.lapse();
        fires && !lapse
    }

    fn decide(&mut self, state: &EgoState, action: [f64; 2], map: &MapSpec, cfg: &EnvConfig) -> GuardianDecision {
        let mut d = self.inner.decide(state, action, map, cfg);
        let lapse = self.lapse();
        let expert = d.expert_action.map(|a| self.perturb(a));
        if expert.is_none() {
            // keep the stream aligned
            self.perturb([0.0; 2]);
        }
        d.expert_action = expert;
        if d.intervene && lapse {
            d.intervene = false;
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_map, Difficulty, DrivingEnv};
    use crate::guardian::{guarded_step, FixedGuardian, ScriptedGuardian};
    use std::sync::Arc;

    fn setup() -> (Arc<MapSpec>, EnvConfig) {
        let cfg = EnvConfig::default();
        (Arc::new(generate_map(2, &Difficulty::default(), &cfg).unwrap()), cfg)
    }

    #[test]
    fn zero_noise_matches_base() {
        let (map, cfg) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut base = ScriptedGuardian::default();
        let mut noisy = apply_noise(ScriptedGuardian::default(), NoiseConfig::default());
        let mut e1 = DrivingEnv::new(cfg);
        let mut e2 = DrivingEnv::new(cfg);
        e1.reset(map.clone());
        e2.reset(map);
        for _ in 0..300 {
            let a = [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
            let s1 = guarded_step(a, &mut base, &mut e1).unwrap();
            let s2 = guarded_step(a, &mut noisy, &mut e2).unwrap();
            assert_eq!(s1.decision, s2.decision);
            assert_eq!(s1.applied, s2.applied);
            if s1.result.terminal() {
                break;
            }
        }
    }

    #[test]
    fn full_lapse_never_intervenes() {
        let (map, cfg) = setup();
        let mut g = apply_noise(
            FixedGuardian::Always,
            NoiseConfig {
                kappa_lapse: 1.0,
                ..Default::default()
            },
        );
        let s = EgoState::spawn(&map);
        for _ in 0..100 {
            assert!(!g.decide(&s, [1.0, 1.0], &map, &cfg).intervene);
            assert!(!g.flags(&s, [1.0, 1.0], &map, &cfg));
        }
    }

    #[test]
    fn lapse_never_adds_interventions() {
        let (map, cfg) = setup();
        let mut g = apply_noise(
            FixedGuardian::Never,
            NoiseConfig {
                epsilon: 0.5,
                kappa_lapse: 0.5,
                seed: 4,
            },
        );
        let s = EgoState::spawn(&map);
        for _ in 0..100 {
            assert!(!g.decide(&s, [1.0, 1.0], &map, &cfg).intervene);
        }
    }

    #[test]
    fn full_epsilon_is_uniform() {
        let (map, cfg) = setup();
        let mut g = apply_noise(
            ScriptedGuardian::default(),
            NoiseConfig {
                epsilon: 1.0,
                kappa_lapse: 0.0,
                seed: 11,
            },
        );
        let s = EgoState::spawn(&map);
        let n = 10_000;
        let mut bins = [0usize; 16];
        for _ in 0..n {
            let a = g.expert(&s, &map, &cfg);
            let b = |v: f64| (((v + 1.0) / 2.0 * 4.0) as usize).min(3);
            bins[b(a[0]) * 4 + b(a[1])] += 1;
        }
        let expected = n as f64 / 16.0;
        let chi2: f64 = bins.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // upper 1% point of chi-square with 15 degrees of freedom
        assert!(chi2 < 30.578, "chi2 = {chi2}");
    }

    #[test]
    fn probabilities_are_validated() {
        assert!(NoiseConfig::default().validate().is_ok());
        assert!(NoiseConfig {
            epsilon: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
