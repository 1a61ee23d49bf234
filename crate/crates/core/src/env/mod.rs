//! Desk-scale 2D driving environment.
//!
//! Kinematic-bicycle vehicle on a procedurally generated multi-lane road
//! with static obstacles, lidar-style observations, an evaluation reward
//! and a collision cost.
//!
//! Sign conventions: the world frame is x-right, y-up; heading is measured
//! counter-clockwise from +x; lateral offsets are positive to the left of the
//! direction of travel. Action component 0 is steering with **positive
//! meaning a right turn**; component 1 is throttle (positive accelerates,
//! negative brakes).

pub mod geometry;
pub mod lidar;
pub mod map;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use geometry::{dist, wrap_angle};
pub use lidar::lidar_scan;
pub use map::{generate_map, Difficulty, Frenet, MapSpec, Obstacle, Segment};

/// Distance before the destination at which an episode counts as arrived.
pub const ARRIVAL_TOLERANCE: f64 = 1.0;
/// Scalars preceding the lidar block in an observation.
pub const OBS_SCALARS: usize = 12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("no drivable map for seed {seed} after {attempts} attempts")]
    Infeasible { seed: u64, attempts: usize },
    #[error("map fixture: {0}")]
    Fixture(String),
    #[error("episode is not active; call reset first")]
    EpisodeOver,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub dt: f64,
    pub wheelbase: f64,
    pub v_max: f64,
    /// Acceleration at full throttle or brake, m/s².
    pub a_max: f64,
    /// Front-wheel angle at full steering, radians.
    pub steer_max: f64,
    pub horizon: usize,
    pub lidar_rays: usize,
    pub lidar_range: f64,
    /// Vehicle collision radius.
    pub car_radius: f64,
    pub progress_weight: f64,
    pub speed_weight: f64,
    pub success_reward: f64,
    /// Fraction of speed kept on entering an obstacle.
    pub contact_damping: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            dt: 0.1,
            wheelbase: 2.5,
            v_max: 10.0,
            a_max: 4.0,
            steer_max: 0.5,
            horizon: 400,
            lidar_rays: 24,
            lidar_range: 50.0,
            car_radius: 1.0,
            progress_weight: 1.0,
            speed_weight: 0.1,
            success_reward: 20.0,
            contact_damping: 0.5,
        }
    }
}

impl EnvConfig {
    pub fn obs_dim(&self) -> usize {
        OBS_SCALARS + self.lidar_rays
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub x: f64,
    pub y: f64,
    /// Radians in `(-π, π]`.
    pub heading: f64,
    /// Meters per second in `[0, v_max]`.
    pub speed: f64,
    pub last_action: [f64; 2],
}

impl EgoState {
    /// At rest on the centerline at the start of the track.
    pub fn spawn(map: &MapSpec) -> Self {
        let (p, heading) = map.point_at(0.0);
        EgoState {
            x: p[0],
            y: p[1],
            heading: wrap_angle(heading),
            speed: 0.0,
            last_action: [0.0, 0.0],
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

pub fn clamp_action(action: [f64; 2]) -> [f64; 2] {
    let c = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
    [c(action[0]), c(action[1])]
}

/// One kinematic-bicycle step: heading first (with the current speed),
/// then position along the new heading, then speed.
pub fn advance(state: &EgoState, action: [f64; 2], cfg: &EnvConfig) -> EgoState {
    let [steer, throttle] = clamp_action(action);
    let v = state.speed;
    let heading = wrap_angle(state.heading - (v / cfg.wheelbase) * (steer * cfg.steer_max).tan() * cfg.dt);
    EgoState {
        x: state.x + v * heading.cos() * cfg.dt,
        y: state.y + v * heading.sin() * cfg.dt,
        heading,
        speed: (v + throttle * cfg.a_max * cfg.dt).clamp(0.0, cfg.v_max),
        last_action: [steer, throttle],
    }
}

pub fn is_out_of_road(frenet: &Frenet, map: &MapSpec) -> bool {
    frenet.offset.abs() > map.half_width()
}

/// Indices of obstacles overlapping the vehicle disc.
pub fn contacts<'a>(state: &EgoState, map: &'a MapSpec, car_radius: f64) -> impl Iterator<Item = usize> + 'a {
    let p = state.position();
    map.obstacles
        .iter()
        .enumerate()
        .filter(move |(_, o)| dist(p, o.center) < o.radius + car_radius)
        .map(|(i, _)| i)
}

/// Builds the observation vector. Layout:
///
/// | idx | meaning | range |
/// |-----|---------|-------|
/// | 0 | speed / v_max | [0, 1] |
/// | 1 | last steering | [-1, 1] |
/// | 2 | last throttle | [-1, 1] |
/// | 3 | heading error / π | [-1, 1] |
/// | 4 | lateral offset / half width (clamped) | [-1, 1] |
/// | 5 | left boundary distance / road width | [0, 1] |
/// | 6 | right boundary distance / road width | [0, 1] |
/// | 7 | remaining distance / track length | [0, 1] |
/// | 8, 9 | sin, cos of bearing to the point 10 m ahead | [-1, 1] |
/// | 10, 11 | sin, cos of bearing to the point 25 m ahead | [-1, 1] |
/// | 12.. | lidar distances / range | [0, 1] |
pub fn observe(state: &EgoState, map: &MapSpec, cfg: &EnvConfig) -> Vec<f64> {
    let f = map.project(state.position());
    observe_with(state, &f, map, cfg)
}

fn observe_with(state: &EgoState, f: &Frenet, map: &MapSpec, cfg: &EnvConfig) -> Vec<f64> {
    let hw = map.half_width();
    let width = map.road_width();
    let mut obs = Vec::with_capacity(cfg.obs_dim());
    obs.push((state.speed / cfg.v_max).clamp(0.0, 1.0));
    obs.push(state.last_action[0].clamp(-1.0, 1.0));
    obs.push(state.last_action[1].clamp(-1.0, 1.0));
    obs.push((wrap_angle(state.heading - f.heading) / std::f64::consts::PI).clamp(-1.0, 1.0));
    obs.push((f.offset / hw).clamp(-1.0, 1.0));
    obs.push(((hw - f.offset) / width).clamp(0.0, 1.0));
    obs.push(((hw + f.offset) / width).clamp(0.0, 1.0));
    obs.push(((map.destination - f.s) / map.destination).clamp(0.0, 1.0));
    for ahead in [10.0, 25.0] {
        let (p, _) = map.point_at(f.s + ahead);
        let bearing = wrap_angle((p[1] - state.y).atan2(p[0] - state.x) - state.heading);
        obs.push(bearing.sin());
        obs.push(bearing.cos());
    }
    obs.extend(lidar_scan(state, map, cfg.lidar_rays, cfg.lidar_range));
    obs
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub progress: f64,
    pub speed: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    /// Evaluation and baseline use only.
    pub reward: f64,
    /// New obstacle contacts this step.
    pub env_cost: u32,
    pub success: bool,
    pub out_of_road: bool,
    pub horizon: bool,
    pub info: StepInfo,
}

impl StepResult {
    pub fn terminal(&self) -> bool {
        self.success || self.out_of_road || self.horizon
    }

    /// Episode ended in a way the value bootstrap must not cross.
    pub fn absorbing(&self) -> bool {
        self.success || self.out_of_road
    }

    /// Entered an unsafe state this step (contact or off-road).
    pub fn unsafe_event(&self) -> bool {
        self.env_cost > 0 || self.out_of_road
    }
}

/// One episode-at-a-time driving simulator.
#[derive(Clone, Debug)]
pub struct DrivingEnv {
    cfg: EnvConfig,
    map: Option<Arc<MapSpec>>,
    ego: EgoState,
    in_contact: Vec<bool>,
    progress: f64,
    t: usize,
    active: bool,
}

impl DrivingEnv {
    pub fn new(cfg: EnvConfig) -> Self {
        DrivingEnv {
            cfg,
            map: None,
            ego: EgoState {
                x: 0.0,
                y: 0.0,
                heading: 0.0,
                speed: 0.0,
                last_action: [0.0; 2],
            },
            in_contact: Vec::new(),
            progress: 0.0,
            t: 0,
            active: false,
        }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn ego(&self) -> &EgoState {
        &self.ego
    }

    pub fn map(&self) -> Option<&Arc<MapSpec>> {
        self.map.as_ref()
    }

    pub fn step_count(&self) -> usize {
        self.t
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn reset(&mut self, map: Arc<MapSpec>) -> Vec<f64> {
        self.ego = EgoState::spawn(&map);
        self.in_contact = vec![false; map.obstacles.len()];
        self.progress = 0.0;
        self.t = 0;
        self.active = true;
        let obs = observe(&self.ego, &map, &self.cfg);
        self.map = Some(map);
        obs
    }

    pub fn observation(&self) -> Option<Vec<f64>> {
        self.map.as_ref().map(|m| observe(&self.ego, m, &self.cfg))
    }

    pub fn step(&mut self, action: [f64; 2]) -> Result<StepResult, EnvError> {
        if !self.active {
            return Err(EnvError::EpisodeOver);
        }
        let map = self.map.clone().ok_or(EnvError::EpisodeOver)?;
        let clamped = clamp_action(action);
        if clamped != action {
            log::debug!("action {action:?} clamped to {clamped:?}");
        }
        let mut next = advance(&self.ego, clamped, &self.cfg);

        let mut env_cost = 0;
        let touching: Vec<usize> = contacts(&next, &map, self.cfg.car_radius).collect();
        for (i, flag) in self.in_contact.iter_mut().enumerate() {
            let now = touching.contains(&i);
            if now && !*flag {
                env_cost += 1;
            }
            *flag = now;
        }
        if env_cost > 0 {
            next.speed *= self.cfg.contact_damping;
        }
        self.ego = next;
        self.t += 1;

        let f = map.project(self.ego.position());
        let out_of_road = is_out_of_road(&f, &map);
        let success = !out_of_road && f.s >= map.destination - ARRIVAL_TOLERANCE;
        let horizon = !success && !out_of_road && self.t >= self.cfg.horizon;
        let delta = f.s - self.progress;
        self.progress = f.s;

        let mut reward = self.cfg.progress_weight * delta + self.cfg.speed_weight * self.ego.speed / self.cfg.v_max;
        if success {
            reward += self.cfg.success_reward;
        }
        let result = StepResult {
            observation: observe_with(&self.ego, &f, &map, &self.cfg),
            reward,
            env_cost,
            success,
            out_of_road,
            horizon,
            info: StepInfo {
                progress: f.s,
                speed: self.ego.speed,
            },
        };
        self.active = !result.terminal();
        Ok(result)
    }
}

/// Disjoint seed lists for training and held-out testing.
pub fn split_seeds(train: usize, test: usize, base: u64) -> (Vec<u64>, Vec<u64>) {
    let train_seeds = (0..train as u64).map(|i| base + i).collect();
    let test_seeds = (0..test as u64).map(|i| base + 1_000_000 + i).collect();
    (train_seeds, test_seeds)
}
