use serde::{Deserialize, Serialize};

use crate::env::{observe, EgoState, EnvConfig, MapSpec};
use crate::learner::LearnerState;
use crate::numeric::NumericError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatCell {
    pub x: f64,
    pub y: f64,
    pub q_value: f64,
    pub policy_steer: f64,
    pub policy_throttle: f64,
}

pub const HEATMAP_HEADER: &str = "x,y,q_value,policy_steer,policy_throttle";

/// Places the car at the center of every cell of a `rows × cols` grid over
/// the road's bounding box, heading along the lane at half the top speed,
/// and records the policy mean action with its proxy value.
pub fn export_q_heatmap(
    learner: &LearnerState,
    map: &MapSpec,
    env_cfg: &EnvConfig,
    rows: usize,
    cols: usize,
) -> Result<Vec<HeatCell>, NumericError> {
    let (lo, hi) = bounding_box(map);
    let mut cells = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let x = lo[0] + (hi[0] - lo[0]) * (c as f64 + 0.5) / cols as f64;
            let y = lo[1] + (hi[1] - lo[1]) * (r as f64 + 0.5) / rows as f64;
            let f = map.project([x, y]);
            let state = EgoState {
                x,
                y,
                heading: f.heading,
                speed: 0.5 * env_cfg.v_max,
                last_action: [0.0, 0.0],
            };
            let obs = observe(&state, map, env_cfg);
            let a = learner.act_deterministic(&obs)?;
            let q = learner.q_value(&obs, a)?;
            cells.push(HeatCell {
                x,
                y,
                q_value: q,
                policy_steer: a[0],
                policy_throttle: a[1],
            });
        }
    }
    Ok(cells)
}

pub fn heatmap_csv(cells: &[HeatCell]) -> String {
    let mut out = String::from(HEATMAP_HEADER);
    out.push('\n');
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            c.x, c.y, c.q_value, c.policy_steer, c.policy_throttle
        ));
    }
    out
}

fn bounding_box(map: &MapSpec) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in map.left_boundary().iter().chain(map.right_boundary()) {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_map, Difficulty};
    use crate::learner::TrainConfig;

    fn setup() -> (LearnerState, MapSpec, EnvConfig) {
        let cfg = EnvConfig::default();
        let map = generate_map(3, &Difficulty::default(), &cfg).unwrap();
        let tc = TrainConfig {
            hidden: vec![16],
            ..Default::default()
        };
        (LearnerState::new(cfg.obs_dim(), &tc, 0), map, cfg)
    }

    #[test]
    fn grid_has_one_row_per_cell() {
        let (l, map, cfg) = setup();
        let cells = export_q_heatmap(&l, &map, &cfg, 4, 7).unwrap();
        assert_eq!(cells.len(), 28);
        let csv = heatmap_csv(&cells);
        assert_eq!(csv.lines().count(), 29);
        assert_eq!(csv.lines().next().unwrap(), HEATMAP_HEADER);
        assert!(cells.iter().all(|c| c.q_value.is_finite()));
    }

    #[test]
    fn zero_q_network_is_flat() {
        let (mut l, map, cfg) = setup();
        l.q1 = l.q1.zeros_like();
        let cells = export_q_heatmap(&l, &map, &cfg, 3, 3).unwrap();
        assert!(cells.iter().all(|c| c.q_value == cells[0].q_value));
    }
}
