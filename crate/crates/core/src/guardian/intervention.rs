use serde::{Deserialize, Serialize};

use crate::env::geometry::ray_circle;
use crate::env::{advance, contacts, is_out_of_road, EgoState, EnvConfig, MapSpec};

/// Thresholds of the intervention predicate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuardianConfig {
    /// Steps the agent action is held constant in the forward simulation.
    pub horizon: usize,
    /// Intervene when `|offset|` exceeds this fraction of the half width.
    pub lateral_margin: f64,
    /// Intervene when time-to-collision along the heading is below this (s).
    pub ttc_threshold: f64,
    /// Once a takeover starts the guardian keeps control this many steps.
    pub min_takeover_duration: usize,
    /// Intervene when holding the action for [`STALL_WINDOW`] steps would
    /// advance less than this many meters along the road. Zero disables.
    pub stall_progress: f64,
}

/// Steps simulated by the stall rule, independent of the hazard horizon.
pub const STALL_WINDOW: usize = 10;

impl Default for GuardianConfig {
    fn default() -> Self {
        GuardianConfig {
            horizon: 10,
            lateral_margin: 0.8,
            ttc_threshold: 1.0,
            min_takeover_duration: 1,
            stall_progress: 1.0,
        }
    }
}

/// Time until the vehicle disc touches an obstacle when driving straight at
/// the current speed. Infinite when nothing is on the path or at rest.
pub fn time_to_collision(state: &EgoState, map: &MapSpec, car_radius: f64) -> f64 {
    let dir = [state.heading.cos(), state.heading.sin()];
    let hit = map
        .obstacles
        .iter()
        .filter_map(|o| ray_circle(state.position(), dir, o.center, o.radius + car_radius))
        .min_by(|a, b| a.total_cmp(b));
    match hit {
        Some(0.0) => 0.0,
        Some(d) if state.speed > 0.0 => d / state.speed,
        _ => f64::INFINITY,
    }
}

/// Margin rules that fire regardless of the proposed action.
pub fn violates_margins(state: &EgoState, map: &MapSpec, gcfg: &GuardianConfig, ecfg: &EnvConfig) -> bool {
    let f = map.project(state.position());
    f.offset.abs() > gcfg.lateral_margin * map.half_width()
        || time_to_collision(state, map, ecfg.car_radius) < gcfg.ttc_threshold
}

/// Steps until holding `action` leads off the road or into an obstacle,
/// within `horizon` steps.
pub fn steps_to_hazard(
    state: &EgoState,
    action: [f64; 2],
    map: &MapSpec,
    horizon: usize,
    ecfg: &EnvConfig,
) -> Option<usize> {
    let mut s = *state;
    for k in 1..=horizon {
        s = advance(&s, action, ecfg);
        let f = map.project(s.position());
        if is_out_of_road(&f, map) || contacts(&s, map, ecfg.car_radius).next().is_some() {
            return Some(k);
        }
        if f.s >= map.destination {
            break;
        }
    }
    None
}

/// Whether holding `action` leaves the vehicle crawling short of the goal.
pub fn stalls(state: &EgoState, action: [f64; 2], map: &MapSpec, min_progress: f64, ecfg: &EnvConfig) -> bool {
    if min_progress <= 0.0 {
        return false;
    }
    let start = map.project(state.position()).s;
    if map.destination - start <= min_progress {
        return false;
    }
    let mut s = *state;
    for _ in 0..STALL_WINDOW {
        s = advance(&s, action, ecfg);
    }
    map.project(s.position()).s - start < min_progress
}

/// The intervention indicator: constant-action lookahead, margin rules and
/// the stall rule.
pub fn should_intervene(
    state: &EgoState,
    agent_action: [f64; 2],
    map: &MapSpec,
    gcfg: &GuardianConfig,
    ecfg: &EnvConfig,
) -> bool {
    violates_margins(state, map, gcfg, ecfg)
        || steps_to_hazard(state, agent_action, map, gcfg.horizon, ecfg).is_some()
        || stalls(state, agent_action, map, gcfg.stall_progress, ecfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Obstacle, Segment};

    fn straight(obstacles: Vec<Obstacle>) -> MapSpec {
        MapSpec::from_parts(0, vec![Segment::Straight { length: 200.0 }], 3, 4.0, obstacles).unwrap()
    }

    fn at(x: f64, y: f64, speed: f64) -> EgoState {
        EgoState {
            x,
            y,
            heading: 0.0,
            speed,
            last_action: [0.0; 2],
        }
    }

    #[test]
    fn calm_state_is_left_alone() {
        let g = GuardianConfig::default();
        let e = EnvConfig::default();
        assert!(!should_intervene(
            &at(20.0, 0.0, 2.0),
            [0.0, 0.0],
            &straight(vec![]),
            &g,
            &e
        ));
    }

    #[test]
    fn full_throttle_into_close_obstacle_fires() {
        // obstacle surface 1 m ahead of the vehicle disc
        let obs = vec![Obstacle {
            center: [20.0 + 1.0 + 1.0 + 0.5, 0.0],
            radius: 0.5,
        }];
        let g = GuardianConfig {
            ttc_threshold: 0.0,
            ..Default::default()
        };
        let e = EnvConfig::default();
        let s = at(20.0, 0.0, 3.0);
        assert!(steps_to_hazard(&s, [0.0, 1.0], &straight(obs.clone()), 10, &e).is_some());
        assert!(should_intervene(&s, [0.0, 1.0], &straight(obs), &g, &e));
    }

    #[test]
    fn margin_violation_fires_for_any_action() {
        let g = GuardianConfig::default();
        let e = EnvConfig::default();
        let map = straight(vec![]);
        let s = at(20.0, 5.0, 0.0);
        for a in [[0.0, 0.0], [1.0, -1.0], [-1.0, 1.0]] {
            assert!(should_intervene(&s, a, &map, &g, &e));
        }
    }

    #[test]
    fn standing_still_fires_stall_rule() {
        let g = GuardianConfig::default();
        let e = EnvConfig::default();
        let map = straight(vec![]);
        let s = at(20.0, 0.0, 0.0);
        assert!(should_intervene(&s, [0.0, 0.0], &map, &g, &e));
        assert!(should_intervene(&s, [0.0, -1.0], &map, &g, &e));
        assert!(!should_intervene(&s, [0.0, 1.0], &map, &g, &e));
        let off = GuardianConfig {
            stall_progress: 0.0,
            ..g
        };
        assert!(!should_intervene(&s, [0.0, 0.0], &map, &off, &e));
        // no stall rule within reach of the destination
        assert!(!stalls(&at(199.5, 0.0, 0.0), [0.0, 0.0], &map, 1.0, &e));
    }

    #[test]
    fn longer_horizon_never_shrinks_interventions() {
        use rand::{Rng, SeedableRng};
        let cfg = EnvConfig::default();
        let map = crate::env::generate_map(7, &crate::env::Difficulty::default(), &cfg).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..300 {
            let s_along = rng.gen_range(0.0..map.destination);
            let p = map.frenet_to_world(s_along, rng.gen_range(-5.0..5.0));
            let (_, th) = map.point_at(s_along);
            let st = EgoState {
                x: p[0],
                y: p[1],
                heading: th + rng.gen_range(-0.5..0.5),
                speed: rng.gen_range(0.0..10.0),
                last_action: [0.0; 2],
            };
            let a = [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
            let mut prev = false;
            for h in [1, 5, 10, 20] {
                let g = GuardianConfig {
                    horizon: h,
                    ..Default::default()
                };
                let now = should_intervene(&st, a, &map, &g, &cfg);
                assert!(now || !prev, "horizon {h} dropped an intervention");
                prev = now;
            }
        }
    }

    #[test]
    fn ttc_rule() {
        let obs = vec![Obstacle {
            center: [30.0, 0.0],
            radius: 1.0,
        }];
        let map = straight(obs);
        let e = EnvConfig::default();
        // gap 30 - 20 - 2 = 8 m at 10 m/s → 0.8 s
        assert!((time_to_collision(&at(20.0, 0.0, 10.0), &map, 1.0) - 0.8).abs() < 1e-12);
        assert!(violates_margins(
            &at(20.0, 0.0, 10.0),
            &map,
            &GuardianConfig::default(),
            &e
        ));
        assert!(time_to_collision(&at(20.0, 0.0, 0.0), &map, 1.0).is_infinite());
    }
}
