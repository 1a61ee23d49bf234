//! Procedurally generated roads.
//!
//! A map is a chain of straight and circular segments starting at the origin
//! heading along +x, a multi-lane road of constant width around the sampled
//! centerline, and static circular obstacles placed on lane centers.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{cross, dist, norm, segment_projection, sub, Point};
use super::{DrivingEnv, EnvConfig, EnvError};

/// Centerline sample spacing in meters.
const SAMPLE_SPACING: f64 = 1.0;
const FIXTURE_HEADER: &str = "haco-map v1";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Segment {
    Straight { length: f64 },
    LeftCurve { radius: f64, angle: f64 },
    RightCurve { radius: f64, angle: f64 },
}

impl Segment {
    pub fn length(&self) -> f64 {
        match *self {
            Segment::Straight { length } => length,
            Segment::LeftCurve { radius, angle } | Segment::RightCurve { radius, angle } => radius * angle,
        }
    }

    /// Heading change per meter (positive turns left).
    fn curvature(&self) -> f64 {
        match *self {
            Segment::Straight { .. } => 0.0,
            Segment::LeftCurve { radius, .. } => 1.0 / radius,
            Segment::RightCurve { radius, .. } => -1.0 / radius,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Point,
    pub radius: f64,
}

/// Position expressed relative to the centerline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frenet {
    /// Arc length of the closest centerline point.
    pub s: f64,
    /// Signed lateral offset, positive to the left of the direction of travel.
    pub offset: f64,
    /// Centerline tangent heading at the projection.
    pub heading: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Difficulty {
    pub min_segments: usize,
    pub max_segments: usize,
    pub straight_length: (f64, f64),
    pub curve_radius: (f64, f64),
    /// Curve sweep in radians.
    pub curve_angle: (f64, f64),
    /// Expected obstacles per 100 m of road.
    pub obstacle_density: f64,
    pub obstacle_radius: (f64, f64),
    pub lanes: u32,
    pub lane_width: f64,
    pub max_retries: usize,
}

impl Default for Difficulty {
    fn default() -> Self {
        Difficulty {
            min_segments: 3,
            max_segments: 5,
            straight_length: (20.0, 45.0),
            curve_radius: (25.0, 60.0),
            curve_angle: (0.45, 1.4),
            obstacle_density: 1.5,
            obstacle_radius: (0.5, 1.0),
            lanes: 3,
            lane_width: 4.0,
            max_retries: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapSpec {
    pub seed: u64,
    pub segments: Vec<Segment>,
    pub lanes: u32,
    pub lane_width: f64,
    pub centerline: Vec<Point>,
    /// Cumulative arc length at each centerline sample.
    pub arc: Vec<f64>,
    pub obstacles: Vec<Obstacle>,
    /// Arc-length position of the goal; the end of the track.
    pub destination: f64,
    left: Vec<Point>,
    right: Vec<Point>,
    obstacle_frenet: Vec<Frenet>,
}

impl MapSpec {
    /// Builds the derived geometry from segments and obstacles.
    pub fn from_parts(
        seed: u64,
        segments: Vec<Segment>,
        lanes: u32,
        lane_width: f64,
        obstacles: Vec<Obstacle>,
    ) -> Result<Self, EnvError> {
        if segments.is_empty() {
            return Err(EnvError::InvalidMap("no segments".into()));
        }
        if lanes == 0 || !(lane_width > 0.0) {
            return Err(EnvError::InvalidMap("lane layout".into()));
        }
        let mut centerline = vec![[0.0, 0.0]];
        let mut arc = vec![0.0];
        let mut heading: f64 = 0.0;
        for seg in &segments {
            let len = seg.length();
            if !(len > 0.0) || !len.is_finite() {
                return Err(EnvError::InvalidMap(format!("segment length {len}")));
            }
            let n = (len / SAMPLE_SPACING).ceil().max(1.0) as usize;
            let ds = len / n as f64;
            let dtheta = seg.curvature() * ds;
            for _ in 0..n {
                // exact chord of a circular arc (or a straight step)
                let chord = if dtheta == 0.0 {
                    ds
                } else {
                    2.0 * (ds / dtheta).abs() * (dtheta / 2.0).abs().sin()
                };
                let mid = heading + dtheta / 2.0;
                let last = *centerline.last().expect("nonempty");
                centerline.push([last[0] + chord * mid.cos(), last[1] + chord * mid.sin()]);
                arc.push(arc.last().expect("nonempty") + ds);
                heading += dtheta;
            }
        }
        let hw = lanes as f64 * lane_width / 2.0;
        let (mut left, mut right) = (
            Vec::with_capacity(centerline.len()),
            Vec::with_capacity(centerline.len()),
        );
        for i in 0..centerline.len() {
            let th = sample_heading(&centerline, i);
            let n = [-th.sin(), th.cos()];
            let c = centerline[i];
            left.push([c[0] + hw * n[0], c[1] + hw * n[1]]);
            right.push([c[0] - hw * n[0], c[1] - hw * n[1]]);
        }
        let destination = *arc.last().expect("nonempty");
        let mut map = MapSpec {
            seed,
            segments,
            lanes,
            lane_width,
            centerline,
            arc,
            obstacles,
            destination,
            left,
            right,
            obstacle_frenet: Vec::new(),
        };
        map.obstacle_frenet = map.obstacles.iter().map(|o| map.project(o.center)).collect();
        for (o, f) in map.obstacles.iter().zip(&map.obstacle_frenet) {
            if f.offset.abs() + o.radius > hw + 1e-9 || !(o.radius > 0.0) {
                return Err(EnvError::InvalidMap(format!(
                    "obstacle at {:?} outside the road",
                    o.center
                )));
            }
        }
        Ok(map)
    }

    pub fn half_width(&self) -> f64 {
        self.lanes as f64 * self.lane_width / 2.0
    }

    pub fn road_width(&self) -> f64 {
        self.lanes as f64 * self.lane_width
    }

    /// Lateral offsets of lane centers, right-most first.
    pub fn lane_centers(&self) -> Vec<f64> {
        let n = self.lanes as f64;
        (0..self.lanes)
            .map(|i| (i as f64 - (n - 1.0) / 2.0) * self.lane_width)
            .collect()
    }

    pub fn obstacle_frenet(&self) -> &[Frenet] {
        &self.obstacle_frenet
    }

    pub fn left_boundary(&self) -> &[Point] {
        &self.left
    }

    pub fn right_boundary(&self) -> &[Point] {
        &self.right
    }

    /// Projects a point onto the centerline (global nearest segment).
    pub fn project(&self, p: Point) -> Frenet {
        let mut best = (f64::INFINITY, 0usize, 0.0);
        for i in 0..self.centerline.len() - 1 {
            let (d2, t) = segment_projection(p, self.centerline[i], self.centerline[i + 1]);
            if d2 < best.0 {
                best = (d2, i, t);
            }
        }
        let (d2, i, t) = best;
        let a = self.centerline[i];
        let e = sub(self.centerline[i + 1], a);
        let side = cross(e, sub(p, a));
        let offset = if side >= 0.0 { d2.sqrt() } else { -d2.sqrt() };
        Frenet {
            s: self.arc[i] + t * (self.arc[i + 1] - self.arc[i]),
            offset,
            heading: e[1].atan2(e[0]),
        }
    }

    /// Centerline point and tangent heading at arc length `s` (clamped to
    /// the track).
    pub fn point_at(&self, s: f64) -> (Point, f64) {
        let s = s.clamp(0.0, self.destination);
        let i = match self.arc.binary_search_by(|v| v.partial_cmp(&s).expect("finite arc")) {
            Ok(i) => i.min(self.arc.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.arc.len() - 2),
        };
        let a = self.centerline[i];
        let b = self.centerline[i + 1];
        let t = (s - self.arc[i]) / (self.arc[i + 1] - self.arc[i]);
        let e = sub(b, a);
        ([a[0] + t * e[0], a[1] + t * e[1]], e[1].atan2(e[0]))
    }

    /// Point at arc length `s` shifted laterally by `offset`.
    pub fn frenet_to_world(&self, s: f64, offset: f64) -> Point {
        let (p, th) = self.point_at(s);
        [p[0] - offset * th.sin(), p[1] + offset * th.cos()]
    }

    /// True if two centerline samples far apart along the road come closer
    /// than `clearance` in the plane.
    fn self_overlaps(&self, clearance: f64, min_arc_gap: f64) -> bool {
        let n = self.centerline.len();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.arc[j] - self.arc[i] > min_arc_gap && dist(self.centerline[i], self.centerline[j]) < clearance {
                    return true;
                }
            }
        }
        false
    }

    /// Serialises to the versioned text fixture format. Floats use the
    /// shortest representation that parses back to the same bits.
    pub fn to_fixture(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{FIXTURE_HEADER}");
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s, "lanes {} {}", self.lanes, self.lane_width);
        for seg in &self.segments {
            let _ = match *seg {
                Segment::Straight { length } => writeln!(s, "straight {length}"),
                Segment::LeftCurve { radius, angle } => writeln!(s, "left {radius} {angle}"),
                Segment::RightCurve { radius, angle } => writeln!(s, "right {radius} {angle}"),
            };
        }
        for o in &self.obstacles {
            let _ = writeln!(s, "obstacle {} {} {}", o.center[0], o.center[1], o.radius);
        }
        s
    }

    pub fn from_fixture(text: &str) -> Result<Self, EnvError> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        if lines.next() != Some(FIXTURE_HEADER) {
            return Err(EnvError::Fixture(format!("missing `{FIXTURE_HEADER}` header")));
        }
        let mut seed = None;
        let mut lanes = None;
        let mut segments = Vec::new();
        let mut obstacles = Vec::new();
        for line in lines {
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let nums: Vec<&str> = parts.collect();
            let f = |i: usize| -> Result<f64, EnvError> {
                nums.get(i)
                    .ok_or_else(|| EnvError::Fixture(format!("`{line}`: missing field {i}")))?
                    .parse::<f64>()
                    .map_err(|e| EnvError::Fixture(format!("`{line}`: {e}")))
            };
            match key {
                "seed" => {
                    seed = Some(
                        nums.first()
                            .and_then(|v| v.parse::<u64>().ok())
                            .ok_or_else(|| EnvError::Fixture(format!("bad seed line `{line}`")))?,
                    )
                }
                "lanes" => {
                    let n = nums
                        .first()
                        .and_then(|v| v.parse::<u32>().ok())
                        .ok_or_else(|| EnvError::Fixture(format!("bad lanes line `{line}`")))?;
                    lanes = Some((n, f(1)?));
                }
                "straight" => segments.push(Segment::Straight { length: f(0)? }),
                "left" => segments.push(Segment::LeftCurve {
                    radius: f(0)?,
                    angle: f(1)?,
                }),
                "right" => segments.push(Segment::RightCurve {
                    radius: f(0)?,
                    angle: f(1)?,
                }),
                "obstacle" => obstacles.push(Obstacle {
                    center: [f(0)?, f(1)?],
                    radius: f(2)?,
                }),
                other => return Err(EnvError::Fixture(format!("unknown record `{other}`"))),
            }
        }
        let seed = seed.ok_or_else(|| EnvError::Fixture("missing seed".into()))?;
        let (n, w) = lanes.ok_or_else(|| EnvError::Fixture("missing lanes".into()))?;
        MapSpec::from_parts(seed, segments, n, w, obstacles)
    }
}

fn sample_heading(c: &[Point], i: usize) -> f64 {
    let (a, b) = if i + 1 < c.len() {
        (c[i], c[i + 1])
    } else {
        (c[i - 1], c[i])
    };
    let e = sub(b, a);
    debug_assert!(norm(e) > 0.0);
    e[1].atan2(e[0])
}

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.gen_range(range.0..range.1)
    } else {
        range.0
    }
}

fn candidate(seed: u64, rng: &mut ChaCha8Rng, d: &Difficulty) -> Result<MapSpec, EnvError> {
    let n = rng.gen_range(d.min_segments.max(1)..=d.max_segments.max(d.min_segments.max(1)));
    let mut segments = vec![Segment::Straight {
        length: uniform(rng, d.straight_length),
    }];
    let mut net_turn = 0.0f64;
    while segments.len() < n {
        let roll: f64 = rng.gen();
        let seg = if roll < 0.34
            || matches!(
                segments.last(),
                Some(Segment::LeftCurve { .. } | Segment::RightCurve { .. })
            ) && roll < 0.5
        {
            Segment::Straight {
                length: uniform(rng, d.straight_length),
            }
        } else {
            let radius = uniform(rng, d.curve_radius);
            let angle = uniform(rng, d.curve_angle);
            // steer the overall course back toward +x to avoid spirals
            let left = if net_turn > 1.0 {
                false
            } else if net_turn < -1.0 {
                true
            } else {
                rng.gen_bool(0.5)
            };
            net_turn += if left { angle } else { -angle };
            if left {
                Segment::LeftCurve { radius, angle }
            } else {
                Segment::RightCurve { radius, angle }
            }
        };
        segments.push(seg);
    }
    let base = MapSpec::from_parts(seed, segments.clone(), d.lanes, d.lane_width, Vec::new())?;
    let road = base.road_width();
    if base.self_overlaps(2.0 * road + 10.0, 4.0 * road + 20.0) {
        return Err(EnvError::InvalidMap("road overlaps itself".into()));
    }

    let length = base.destination;
    let expected = d.obstacle_density.max(0.0) * length / 100.0;
    let mut count = expected.floor() as usize;
    if rng.gen::<f64>() < expected - expected.floor() {
        count += 1;
    }
    let lanes = base.lane_centers();
    let hw = base.half_width();
    let mut placed: Vec<f64> = Vec::new();
    let mut obstacles = Vec::new();
    let (lo, hi) = (35.0, length - 15.0);
    for _ in 0..count {
        if hi <= lo {
            break;
        }
        for _ in 0..50 {
            let s = rng.gen_range(lo..hi);
            if placed.iter().any(|&p| (p - s).abs() < 18.0) {
                continue;
            }
            let lane = lanes[rng.gen_range(0..lanes.len())];
            let radius = uniform(rng, d.obstacle_radius);
            let offset = (lane + rng.gen_range(-0.3..0.3)).clamp(-hw + radius, hw - radius);
            placed.push(s);
            obstacles.push(Obstacle {
                center: base.frenet_to_world(s, offset),
                radius,
            });
            break;
        }
    }
    MapSpec::from_parts(seed, segments, d.lanes, d.lane_width, obstacles)
}

/// Checks that the scripted expert completes the map without contact.
pub fn expert_completes(map: &Arc<MapSpec>, env_cfg: &EnvConfig) -> bool {
    let mut cfg = *env_cfg;
    cfg.horizon = cfg.horizon.max(1000);
    let mut env = DrivingEnv::new(cfg);
    env.reset(map.clone());
    loop {
        let action = crate::guardian::expert_action(env.ego(), map, &cfg);
        let Ok(r) = env.step(action) else { return false };
        if r.env_cost > 0 {
            return false;
        }
        if r.terminal() {
            return r.success;
        }
    }
}

/// Deterministically generates a drivable map for `seed`.
///
/// Candidates whose road overlaps itself or that the scripted expert cannot
/// complete without contact are resampled from the same seeded stream.
pub fn generate_map(seed: u64, difficulty: &Difficulty, env_cfg: &EnvConfig) -> Result<MapSpec, EnvError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4d41_505f_5345_4544);
    for _ in 0..difficulty.max_retries.max(1) {
        let Ok(map) = candidate(seed, &mut rng, difficulty) else {
            continue;
        };
        let map = Arc::new(map);
        if expert_completes(&map, env_cfg) {
            return Ok(Arc::try_unwrap(map).unwrap_or_else(|m| (*m).clone()));
        }
    }
    Err(EnvError::Infeasible {
        seed,
        attempts: difficulty.max_retries.max(1),
    })
}
