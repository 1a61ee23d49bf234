//! Wire messages. One JSON object per websocket text message, each with
//! `"v"` and `"type"`.
//!
//! Units: meters, radians, meters per second. Heading is measured
//! counter-clockwise from +x. Steering is in `[-1, 1]` with positive turning
//! right; throttle is in `[-1, 1]` with negative braking.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::lidar::{lidar_scan, ray_angles};
use crate::env::{EgoState, EnvConfig, MapSpec};

pub const PROTOCOL_VERSION: u32 = 1;

/// Every `CENTERLINE_STRIDE` meters of road is sent as one centerline point.
pub const CENTERLINE_STRIDE: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unsupported protocol version {0}")]
    Version(u32),
    #[error("invalid {field}: {detail}")]
    Invalid { field: &'static str, detail: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObstacleMsg {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: usize,
    pub step_count: usize,
    pub takeover_rate: f64,
    pub episodic_intervention_cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMsg {
    pub tick: u64,
    pub pose: Pose,
    pub speed: f64,
    pub centerline: Vec<[f64; 2]>,
    pub road_half_width: f64,
    pub obstacles: Vec<ObstacleMsg>,
    /// World-frame end points of the range rays.
    pub lidar: Vec<[f64; 2]>,
    /// What the agent would do this tick.
    pub proposed_action: [f64; 2],
    /// Takeover state the server currently holds.
    pub takeover: bool,
    pub stats: EpisodeStats,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InputMsg {
    /// Tick of the latest frame the console has seen.
    pub tick: u64,
    pub takeover: bool,
    pub steering: f64,
    pub throttle: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HelloMsg {
    /// `"console"` from the client, `"server"` from the server.
    pub role: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default)]
    pub tick_hz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ByeMsg {
    #[serde(default)]
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Message {
    Frame(FrameMsg),
    Input(InputMsg),
    Hello(HelloMsg),
    Bye(ByeMsg),
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    v: u32,
    #[serde(flatten)]
    msg: Message,
}

#[derive(Deserialize)]
struct VersionOnly {
    v: u32,
}

impl Message {
    pub fn encode(&self) -> String {
        serde_json::to_string(&Envelope {
            v: PROTOCOL_VERSION,
            msg: self.clone(),
        })
        .expect("messages serialize")
    }

    /// Parses and validates one message.
    pub fn decode(text: &str) -> Result<Message, ProtocolError> {
        let v: VersionOnly = serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        if v.v != PROTOCOL_VERSION {
            return Err(ProtocolError::Version(v.v));
        }
        let env: Envelope = serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        match &env.msg {
            Message::Frame(f) => f.validate()?,
            Message::Input(i) => i.validate()?,
            _ => {}
        }
        Ok(env.msg)
    }
}

fn finite(field: &'static str, xs: impl IntoIterator<Item = f64>) -> Result<(), ProtocolError> {
    match xs.into_iter().find(|x| !x.is_finite()) {
        Some(x) => Err(ProtocolError::Invalid {
            field,
            detail: format!("non-finite value {x}"),
        }),
        None => Ok(()),
    }
}

fn unit(field: &'static str, x: f64) -> Result<(), ProtocolError> {
    if (-1.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(ProtocolError::Invalid {
            field,
            detail: format!("{x} outside [-1, 1]"),
        })
    }
}

impl FrameMsg {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        finite(
            "pose",
            [
                self.pose.x,
                self.pose.y,
                self.pose.heading,
                self.speed,
                self.road_half_width,
            ],
        )?;
        finite("centerline", self.centerline.iter().flatten().copied())?;
        finite("obstacles", self.obstacles.iter().flat_map(|o| [o.x, o.y, o.radius]))?;
        finite("lidar", self.lidar.iter().flatten().copied())?;
        unit("proposed_action", self.proposed_action[0])?;
        unit("proposed_action", self.proposed_action[1])?;
        finite(
            "stats",
            [self.stats.takeover_rate, self.stats.episodic_intervention_cost],
        )?;
        if !(0.0..=1.0).contains(&self.stats.takeover_rate) {
            return Err(ProtocolError::Invalid {
                field: "stats",
                detail: format!("takeover rate {}", self.stats.takeover_rate),
            });
        }
        Ok(())
    }

    /// Hex sha256 of the encoded frame.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(Message::Frame(self.clone()).encode().as_bytes()))
    }

    pub fn build(
        tick: u64,
        ego: &EgoState,
        map: &MapSpec,
        env_cfg: &EnvConfig,
        proposed_action: [f64; 2],
        takeover: bool,
        stats: EpisodeStats,
    ) -> FrameMsg {
        let length = *map.arc.last().unwrap_or(&0.0);
        let n = (length / CENTERLINE_STRIDE).ceil() as usize;
        let centerline = (0..=n)
            .map(|i| map.point_at((i as f64 * CENTERLINE_STRIDE).min(length)).0)
            .collect();
        let scan = lidar_scan(ego, map, env_cfg.lidar_rays, env_cfg.lidar_range);
        let lidar = scan
            .iter()
            .zip(ray_angles(scan.len()))
            .map(|(d, a)| {
                let angle = ego.heading + a;
                let r = d * env_cfg.lidar_range;
                [ego.x + r * angle.cos(), ego.y + r * angle.sin()]
            })
            .collect();
        FrameMsg {
            tick,
            pose: Pose {
                x: ego.x,
                y: ego.y,
                heading: ego.heading,
            },
            speed: ego.speed,
            centerline,
            road_half_width: map.half_width(),
            obstacles: map
                .obstacles
                .iter()
                .map(|o| ObstacleMsg {
                    x: o.center[0],
                    y: o.center[1],
                    radius: o.radius,
                })
                .collect(),
            lidar,
            proposed_action,
            takeover,
            stats,
        }
    }
}

impl InputMsg {
    /// Steering and throttle clamped to `[-1, 1]`, non-finite values to 0.
    pub fn clamped(&self) -> InputMsg {
        let c = |x: f64| if x.is_finite() { x.clamp(-1.0, 1.0) } else { 0.0 };
        InputMsg {
            steering: c(self.steering),
            throttle: c(self.throttle),
            ..*self
        }
    }

    /// Inputs are accepted out of range and clamped on use; only non-finite
    /// values are malformed.
    pub fn validate(&self) -> Result<(), ProtocolError> {
        finite("input", [self.steering, self.throttle])
    }

    pub fn action(&self) -> [f64; 2] {
        let c = self.clamped();
        [c.steering, c.throttle]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn input_round_trip_carries_version_and_type() {
        let m = Message::Input(InputMsg {
            tick: 7,
            takeover: true,
            steering: -0.5,
            throttle: 0.25,
        });
        let text = m.encode();
        let raw: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(raw["v"], 1);
        assert_eq!(raw["type"], "input");
        assert_eq!(Message::decode(&text).unwrap(), m);
    }

    #[test]
    fn rejects_wrong_version_and_garbage() {
        assert_eq!(
            Message::decode(r#"{"v":2,"type":"bye","reason":""}"#),
            Err(ProtocolError::Version(2))
        );
        assert!(matches!(Message::decode("not json"), Err(ProtocolError::Malformed(_))));
        assert!(matches!(
            Message::decode(r#"{"v":1,"type":"nope"}"#),
            Err(ProtocolError::Malformed(_))
        ));
        assert!(Message::decode(r#"{"v":1,"type":"bye"}"#).is_ok());
    }

    #[test]
    fn clamps_inputs() {
        let i = InputMsg {
            tick: 0,
            takeover: true,
            steering: 3.0,
            throttle: -7.0,
        };
        assert_eq!(i.action(), [1.0, -1.0]);
        let nan = InputMsg {
            steering: f64::NAN,
            ..i
        };
        assert!(nan.validate().is_err());
        assert_eq!(nan.action()[0], 0.0);
    }

    #[test]
    fn frames_validate_and_digest() {
        use crate::env::{generate_map, Difficulty};
        let cfg = EnvConfig::default();
        let map = generate_map(2, &Difficulty::default(), &cfg).unwrap();
        let ego = EgoState::spawn(&map);
        let f = FrameMsg::build(0, &ego, &map, &cfg, [0.0, 0.5], false, EpisodeStats::default());
        f.validate().unwrap();
        assert_eq!(f.lidar.len(), cfg.lidar_rays);
        assert_eq!(f.obstacles.len(), map.obstacles.len());
        let text = Message::Frame(f.clone()).encode();
        assert_eq!(Message::decode(&text).unwrap(), Message::Frame(f.clone()));
        assert_eq!(f.digest(), f.clone().digest());
        let mut g = f.clone();
        g.tick = 1;
        assert_ne!(f.digest(), g.digest());
        g.pose.x = f64::NAN;
        assert!(g.validate().is_err());
    }
}
