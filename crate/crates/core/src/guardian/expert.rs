//! Scripted stand-in for the human expert.
//!
//! Pure pursuit toward a lookahead point on the chosen lane center. The lane
//! is the one the vehicle currently occupies unless an obstacle ahead blocks
//! it, in which case the nearest free lane is taken. Throttle tracks a cruise
//! speed and slows down while an obstacle sits inside the forward cone.

use crate::env::geometry::{dist, wrap_angle};
use crate::env::{EgoState, EnvConfig, MapSpec};

pub const CRUISE_SPEED: f64 = 7.0;
const CAUTION_SPEED: f64 = 3.0;
/// Obstacles this far ahead (m) influence lane choice.
const PLAN_AHEAD: f64 = 30.0;
/// Obstacles this far behind (m) still block their lane.
const PLAN_BEHIND: f64 = 4.0;
const SPEED_GAIN: f64 = 0.8;
const CONE_HALF_ANGLE: f64 = 0.35;

fn lane_blocked(map: &MapSpec, s: f64, lane: f64) -> bool {
    map.obstacles.iter().zip(map.obstacle_frenet()).any(|(o, f)| {
        let ahead = f.s - s;
        (-PLAN_BEHIND..=PLAN_AHEAD).contains(&ahead) && (f.offset - lane).abs() < map.lane_width / 2.0 + o.radius
    })
}

/// Lateral offset of the lane the expert steers toward.
pub fn target_lane(state: &EgoState, map: &MapSpec) -> f64 {
    let f = map.project(state.position());
    let lanes = map.lane_centers();
    let by_distance = |a: &f64, b: &f64| (a - f.offset).abs().total_cmp(&(b - f.offset).abs());
    let current = lanes.iter().copied().min_by(by_distance).expect("at least one lane");
    if !lane_blocked(map, f.s, current) {
        return current;
    }
    lanes
        .iter()
        .copied()
        .filter(|&l| !lane_blocked(map, f.s, l))
        .min_by(by_distance)
        .unwrap_or(current)
}

/// Expert action `[steering, throttle]`, both in `[-1, 1]`.
pub fn expert_action(state: &EgoState, map: &MapSpec, cfg: &EnvConfig) -> [f64; 2] {
    let f = map.project(state.position());
    let lane = target_lane(state, map);
    let lookahead = (4.0 + 0.8 * state.speed).clamp(5.0, 12.0);
    let target = map.frenet_to_world(f.s + lookahead, lane);
    let dx = target[0] - state.x;
    let dy = target[1] - state.y;
    let ld = dx.hypot(dy).max(1e-6);
    let alpha = wrap_angle(dy.atan2(dx) - state.heading);
    let wheel = (2.0 * cfg.wheelbase * alpha.sin() / ld).atan();
    // positive steering action turns right, i.e. negative wheel angle
    let steer = (-wheel / cfg.steer_max).clamp(-1.0, 1.0);

    let mut v_target = CRUISE_SPEED.min(cfg.v_max);
    let reach = 2.0 * state.speed + 6.0;
    for o in &map.obstacles {
        let d = dist(state.position(), o.center);
        if d - o.radius > reach {
            continue;
        }
        let bearing = wrap_angle((o.center[1] - state.y).atan2(o.center[0] - state.x) - state.heading);
        let lateral = d * bearing.sin();
        if bearing.abs() < CONE_HALF_ANGLE && lateral.abs() < o.radius + cfg.car_radius + 0.5 {
            v_target = v_target.min(CAUTION_SPEED);
        }
    }
    let throttle = (SPEED_GAIN * (v_target - state.speed)).clamp(-1.0, 1.0);
    [steer, throttle]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_map, Difficulty, Obstacle, Segment};

    fn straight() -> MapSpec {
        MapSpec::from_parts(0, vec![Segment::Straight { length: 200.0 }], 3, 4.0, Vec::new()).unwrap()
    }

    fn at(x: f64, y: f64, heading: f64, speed: f64) -> EgoState {
        EgoState {
            x,
            y,
            heading,
            speed,
            last_action: [0.0; 2],
        }
    }

    #[test]
    fn aligned_on_centerline_steers_straight() {
        let a = expert_action(&at(20.0, 0.0, 0.0, 5.0), &straight(), &EnvConfig::default());
        assert!(a[0].abs() < 1e-12);
        assert!(a[1] > 0.0);
    }

    #[test]
    fn left_offset_steers_right() {
        // 1.5 m left of the middle lane center: positive action = right turn
        let a = expert_action(&at(20.0, 1.5, 0.0, 5.0), &straight(), &EnvConfig::default());
        assert!(a[0] > 0.0);
        let a = expert_action(&at(20.0, -1.5, 0.0, 5.0), &straight(), &EnvConfig::default());
        assert!(a[0] < 0.0);
    }

    #[test]
    fn blocked_lane_is_avoided() {
        let map = MapSpec::from_parts(
            0,
            vec![Segment::Straight { length: 200.0 }],
            3,
            4.0,
            vec![Obstacle {
                center: [40.0, 0.0],
                radius: 0.8,
            }],
        )
        .unwrap();
        let lane = target_lane(&at(20.0, 0.0, 0.0, 7.0), &map);
        assert!((lane.abs() - 4.0).abs() < 1e-12);
        assert_eq!(target_lane(&at(2.0, 0.0, 0.0, 7.0), &map), 0.0);
    }

    #[test]
    fn output_is_clamped() {
        let a = expert_action(&at(20.0, 5.5, 2.5, 10.0), &straight(), &EnvConfig::default());
        assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn golden_action_on_curve() {
        // frozen from the implementation on a fixed curved fixture
        let map = MapSpec::from_parts(
            0,
            vec![
                Segment::Straight { length: 20.0 },
                Segment::LeftCurve {
                    radius: 30.0,
                    angle: 1.2,
                },
            ],
            3,
            4.0,
            Vec::new(),
        )
        .unwrap();
        let p = map.frenet_to_world(35.0, 0.5);
        let (_, th) = map.point_at(35.0);
        let a = expert_action(&at(p[0], p[1], th + 0.05, 6.0), &map, &EnvConfig::default());
        assert!(a[0] < 0.0, "left curve needs left steering");
        assert!((a[0] - GOLDEN_CURVE[0]).abs() < 1e-12, "{a:?}");
        assert!((a[1] - GOLDEN_CURVE[1]).abs() < 1e-12, "{a:?}");
    }

    const GOLDEN_CURVE: [f64; 2] = [-0.026466168473913115, 0.8];

    #[test]
    fn expert_finishes_generated_maps() {
        let cfg = EnvConfig::default();
        for seed in 0..6 {
            let map = std::sync::Arc::new(generate_map(seed, &Difficulty::default(), &cfg).unwrap());
            assert!(crate::env::map::expert_completes(&map, &cfg));
        }
    }
}
