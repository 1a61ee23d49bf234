use super::geometry::{dist, ray_circle, ray_segment, Point};
use super::map::{MapSpec, Obstacle};
use super::EgoState;

/// Something a lidar ray can hit.
pub trait Scene {
    /// Nearest hit along the unit ray `dir`, if closer than `max_range`.
    fn cast(&self, origin: Point, dir: Point, max_range: f64) -> Option<f64>;
}

/// Road boundaries and obstacles of a map, pre-filtered to the sensor's
/// reach.
struct MapScene<'a> {
    walls: Vec<(Point, Point)>,
    obstacles: &'a [Obstacle],
}

impl<'a> MapScene<'a> {
    fn new(map: &'a MapSpec, origin: Point, max_range: f64) -> Self {
        let mut walls = Vec::new();
        for side in [map.left_boundary(), map.right_boundary()] {
            for w in side.windows(2) {
                let half = dist(w[0], w[1]) / 2.0;
                let mid = [(w[0][0] + w[1][0]) / 2.0, (w[0][1] + w[1][1]) / 2.0];
                if dist(mid, origin) <= max_range + half {
                    walls.push((w[0], w[1]));
                }
            }
        }
        MapScene {
            walls,
            obstacles: &map.obstacles,
        }
    }
}

impl Scene for MapScene<'_> {
    fn cast(&self, origin: Point, dir: Point, max_range: f64) -> Option<f64> {
        let walls = self.walls.iter().filter_map(|&(a, b)| ray_segment(origin, dir, a, b));
        let obs = self
            .obstacles
            .iter()
            .filter_map(|o| ray_circle(origin, dir, o.center, o.radius));
        walls
            .chain(obs)
            .filter(|&t| t < max_range)
            .min_by(|a, b| a.total_cmp(b))
    }
}

/// Obstacles only, no road boundaries. Used for sensor tests.
pub struct Arena<'a> {
    pub obstacles: &'a [Obstacle],
}

impl Scene for Arena<'_> {
    fn cast(&self, origin: Point, dir: Point, max_range: f64) -> Option<f64> {
        self.obstacles
            .iter()
            .filter_map(|o| ray_circle(origin, dir, o.center, o.radius))
            .filter(|&t| t < max_range)
            .min_by(|a, b| a.total_cmp(b))
    }
}

/// Ray angles relative to the heading: ray 0 points forward and rays are
/// spaced uniformly counter-clockwise, so ray `k` and ray `K - k` mirror
/// each other about the heading axis.
pub fn ray_angles(rays: usize) -> impl Iterator<Item = f64> {
    (0..rays).map(move |k| 2.0 * std::f64::consts::PI * k as f64 / rays as f64)
}

/// Normalised distances in `[0, 1]`; 1 means nothing within range.
pub fn scan_scene(scene: &dyn Scene, origin: Point, heading: f64, rays: usize, max_range: f64) -> Vec<f64> {
    ray_angles(rays)
        .map(|a| {
            let th = heading + a;
            let dir = [th.cos(), th.sin()];
            scene
                .cast(origin, dir, max_range)
                .map_or(1.0, |t| (t / max_range).clamp(0.0, 1.0))
        })
        .collect()
}

pub fn lidar_scan(state: &EgoState, map: &MapSpec, rays: usize, max_range: f64) -> Vec<f64> {
    let origin = [state.x, state.y];
    let scene = MapScene::new(map, origin, max_range);
    scan_scene(&scene, origin, state.heading, rays.max(1), max_range)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::map::Segment;

    #[test]
    fn empty_arena_reads_max_everywhere() {
        let scan = scan_scene(&Arena { obstacles: &[] }, [0.0, 0.0], 0.3, 24, 50.0);
        assert!(scan.iter().all(|&d| d == 1.0));
    }

    #[test]
    fn obstacle_dead_ahead() {
        // ray from origin along +x hits a circle centred at (20, 0), r = 1 at t = 19
        let obs = [Obstacle {
            center: [20.0, 0.0],
            radius: 1.0,
        }];
        let scan = scan_scene(&Arena { obstacles: &obs }, [0.0, 0.0], 0.0, 24, 50.0);
        assert!((scan[0] - 19.0 / 50.0).abs() < 1e-12);
        assert!(scan[1..].iter().all(|&d| d == 1.0 || d > 0.38));
    }

    #[test]
    fn mirror_symmetric_scene() {
        let obs = [
            Obstacle {
                center: [12.0, 5.0],
                radius: 1.5,
            },
            Obstacle {
                center: [12.0, -5.0],
                radius: 1.5,
            },
            Obstacle {
                center: [-8.0, 0.0],
                radius: 2.0,
            },
        ];
        let k = 24;
        let scan = scan_scene(&Arena { obstacles: &obs }, [0.0, 0.0], 0.0, k, 50.0);
        for i in 1..k {
            assert!((scan[i] - scan[k - i]).abs() < 1e-12, "ray {i}");
        }
    }

    #[test]
    fn straight_road_forward_ray_is_clear() {
        let map = MapSpec::from_parts(0, vec![Segment::Straight { length: 200.0 }], 3, 4.0, Vec::new()).unwrap();
        let mut ego = EgoState::spawn(&map);
        ego.x = 20.0;
        let scan = lidar_scan(&ego, &map, 24, 50.0);
        assert_eq!(scan[0], 1.0);
        // lateral ray hits the boundary 6 m away
        assert!((scan[6] - 6.0 / 50.0).abs() < 1e-12);
        assert!((scan[18] - 6.0 / 50.0).abs() < 1e-12, "{scan:?}");
    }
}
