use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{guarded_step, Guardian};
use crate::env::{DrivingEnv, EnvConfig, MapSpec};

/// Total measure of the action box `[-1, 1]²`.
pub const ACTION_VOLUME: f64 = 4.0;
/// Steps between recorded states in the sampling rollouts.
const STATE_STRIDE: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceEstimate {
    pub epsilon_hat: f64,
    pub kappa_hat: f64,
    /// Largest measure of un-flagged actions over the sampled states.
    pub k_prime_hat: f64,
    pub n_states: usize,
    pub n_actions: usize,
    /// Sampled (state, action) pairs whose one-step outcome was unsafe.
    pub n_unsafe_pairs: usize,
}

impl ToleranceEstimate {
    pub const CSV_HEADER: &'static str = "epsilon_hat,kappa_hat,k_prime_hat,n_states,n_actions,n_unsafe_pairs";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epsilon_hat, self.kappa_hat, self.k_prime_hat, self.n_states, self.n_actions, self.n_unsafe_pairs
        )
    }
}

/// Whether applying `action` from the environment's current state enters
/// an unsafe state (new contact or off-road).
pub fn one_step_unsafe(env: &DrivingEnv, action: [f64; 2]) -> bool {
    let mut probe = env.clone();
    probe.step(action).map(|r| r.unsafe_event()).unwrap_or(false)
}

/// Environment snapshots visited by a uniform-random agent under `guardian`.
pub fn sample_states<G: Guardian + ?Sized>(
    guardian: &mut G,
    cfg: &EnvConfig,
    maps: &[Arc<MapSpec>],
    n_states: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<DrivingEnv> {
    let mut states = Vec::with_capacity(n_states);
    if maps.is_empty() {
        return states;
    }
    let mut env = DrivingEnv::new(*cfg);
    let mut episode = 0;
    while states.len() < n_states {
        env.reset(maps[episode % maps.len()].clone());
        guardian.reset();
        episode += 1;
        let mut t = 0;
        while env.is_active() && states.len() < n_states {
            if t % STATE_STRIDE == 0 {
                states.push(env.clone());
            }
            let a = [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
            if guarded_step(a, guardian, &mut env).is_err() {
                break;
            }
            t += 1;
        }
    }
    states
}

/// Monte Carlo estimates of the expert error rate, the intervention miss
/// rate and the tolerance over on-policy states of a random agent.
pub fn estimate_tolerance<G: Guardian + ?Sized>(
    guardian: &mut G,
    cfg: &EnvConfig,
    maps: &[Arc<MapSpec>],
    n_states: usize,
    n_actions: usize,
    seed: u64,
) -> ToleranceEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = sample_states(guardian, cfg, maps, n_states, &mut rng);
    let mut expert_unsafe = 0usize;
    let mut unsafe_pairs = 0usize;
    let mut missed = 0usize;
    let mut k_prime: f64 = 0.0;
    for env in &states {
        let map = env.map().expect("sampled state has a map").clone();
        let ego = *env.ego();
        let a_h = guardian.expert(&ego, &map, cfg);
        if one_step_unsafe(env, a_h) {
            expert_unsafe += 1;
        }
        let mut unflagged = 0usize;
        for _ in 0..n_actions {
            let a = [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
            let flagged = guardian.flags(&ego, a, &map, cfg);
            if !flagged {
                unflagged += 1;
            }
            if one_step_unsafe(env, a) {
                unsafe_pairs += 1;
                if !flagged {
                    missed += 1;
                }
            }
        }
        if n_actions > 0 {
            k_prime = k_prime.max(unflagged as f64 / n_actions as f64 * ACTION_VOLUME);
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    ToleranceEstimate {
        epsilon_hat: ratio(expert_unsafe, states.len()),
        kappa_hat: ratio(missed, unsafe_pairs),
        k_prime_hat: k_prime,
        n_states: states.len(),
        n_actions,
        n_unsafe_pairs: unsafe_pairs,
    }
}
