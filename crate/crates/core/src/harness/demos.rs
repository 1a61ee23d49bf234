use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{DrivingEnv, EnvConfig, MapSpec};
use crate::guardian::Guardian;

use super::HarnessError;

pub const DEMO_LOG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoHeader {
    pub v: u32,
    pub kind: String,
    pub obs_dim: usize,
    pub act_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoRecord {
    pub map_seed: u64,
    pub obs: Vec<f64>,
    pub action: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoLog {
    pub header: DemoHeader,
    pub records: Vec<DemoRecord>,
}

/// The guardian's expert drives alone for `n_steps` steps, cycling maps.
pub fn record_demonstrations<G: Guardian + ?Sized>(
    guardian: &mut G,
    env_cfg: &EnvConfig,
    maps: &[Arc<MapSpec>],
    n_steps: usize,
) -> DemoLog {
    let header = DemoHeader {
        v: DEMO_LOG_VERSION,
        kind: "demonstrations".into(),
        obs_dim: env_cfg.obs_dim(),
        act_dim: 2,
    };
    let mut records = Vec::with_capacity(n_steps);
    let mut env = DrivingEnv::new(*env_cfg);
    let mut episode = 0;
    while records.len() < n_steps && !maps.is_empty() {
        let map = maps[episode % maps.len()].clone();
        episode += 1;
        let mut obs = env.reset(map.clone());
        guardian.reset();
        while records.len() < n_steps {
            let action = guardian.expert(env.ego(), &map, env_cfg);
            let Ok(r) = env.step(action) else { break };
            records.push(DemoRecord {
                map_seed: map.seed,
                obs: std::mem::replace(&mut obs, r.observation.clone()),
                action,
            });
            if r.terminal() {
                break;
            }
        }
    }
    DemoLog { header, records }
}

impl DemoLog {
    pub fn write<W: Write>(&self, mut w: W) -> Result<(), HarnessError> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self, HarnessError> {
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or_else(|| HarnessError::Format("empty demonstration log".into()))??;
        let header: DemoHeader = serde_json::from_str(&first)?;
        if header.v != DEMO_LOG_VERSION {
            return Err(HarnessError::Format(format!(
                "unsupported demonstration log version {}",
                header.v
            )));
        }
        let mut records = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: DemoRecord = serde_json::from_str(&line)?;
            if rec.obs.len() != header.obs_dim {
                return Err(HarnessError::Format(format!(
                    "record {} has {} observation values, header says {}",
                    records.len(),
                    rec.obs.len(),
                    header.obs_dim
                )));
            }
            records.push(rec);
        }
        Ok(DemoLog { header, records })
    }
}
