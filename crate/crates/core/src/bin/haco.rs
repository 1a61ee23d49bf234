use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use haco::copilot::{replay_session, serve, Pacing, ServeOptions, SessionLog};
use haco::guardian::{NoiseConfig, ScriptedGuardian};
use haco::harness::{
    build_maps, evaluate_checkpoint, export_q_heatmap, heatmap_csv, record_demonstrations, run, Mode, RunConfig,
};
use haco::learner::LearnerState;
use haco::numeric::Checkpoint;
use haco::theory::{risk_bound, verify_bound, BoundInputs, RiskReport, VerifySettings};

#[derive(Parser)]
#[command(name = "haco", about = "Reward-free driving with human takeover")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one mode and write its run directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Used when no config file is given.
        #[arg(long, default_value = "haco")]
        mode: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace every environment reward with zero.
        #[arg(long)]
        zero_reward: bool,
    },
    /// Evaluate a checkpoint on the test maps without a guardian.
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 2)]
        episodes: usize,
    },
    /// Print the risk bound, or compare it with rollouts of noisy guardians.
    VerifyBound {
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        k_prime: Option<f64>,
        #[arg(long, default_value_t = 0.99)]
        gamma: f64,
        /// `epsilon:lapse` pairs for the empirical check.
        #[arg(long, value_delimiter = ',', default_value = "0:0,0.05:0.05,0.1:0.1")]
        noise: Vec<String>,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Export a Q-value grid over one map.
    Heatmap {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        map_seed: u64,
        #[arg(long, default_value_t = 40)]
        rows: usize,
        #[arg(long, default_value_t = 40)]
        cols: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Record expert demonstrations on the training maps.
    RecordDemos {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the copilot console over WebSocket.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8765")]
        addr: String,
        #[arg(long, default_value_t = 10.0)]
        tick_hz: f64,
        /// Wait for each input instead of running on the clock.
        #[arg(long)]
        lockstep: bool,
        #[arg(long, default_value_t = 20)]
        update_budget_ms: u64,
        #[arg(long)]
        max_ticks: Option<u64>,
        #[arg(long, default_value = "session.jsonl")]
        log: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Rebuild the learner from a session log.
    Replay {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fail unless the result matches this checkpoint byte for byte.
        #[arg(long)]
        expect: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>, mode: Mode) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(RunConfig::desk(mode)),
    }
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn parse_noise(s: &str) -> Result<NoiseConfig> {
    let (e, k) = s.split_once(':').context("noise pairs look like epsilon:lapse")?;
    Ok(NoiseConfig {
        epsilon: e.trim().parse()?,
        kappa_lapse: k.trim().parse()?,
        seed: 0,
    })
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Cmd::Train {
            config,
            mode,
            seed,
            steps,
            out,
            zero_reward,
        } => {
            let mode = Mode::parse(&mode).with_context(|| format!("unknown mode {mode}"))?;
            let mut cfg = load_config(config.as_deref(), mode)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(s) = steps {
                cfg.total_steps = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            cfg.zero_reward |= zero_reward;
            cfg.validate()?;
            let report = run(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report.summary)?);
            println!("wrote {}", report.dir.display());
        }
        Cmd::Evaluate {
            config,
            checkpoint,
            episodes,
        } => {
            let cfg = load_config(config.as_deref(), Mode::Haco)?;
            let maps = build_maps(&cfg.test_seeds, &cfg.difficulty, &cfg.env)?;
            let expected = config.is_some().then(|| cfg.hash());
            let result = evaluate_checkpoint(&checkpoint, expected.as_deref(), &maps, &cfg.env, episodes)?;
            print!("{}", result.to_csv());
            println!(
                "success {:.3} return {:.3} safety {:.3}",
                result.success_rate, result.mean_return, result.mean_safety_violation
            );
        }
        Cmd::VerifyBound {
            epsilon,
            kappa,
            k_prime,
            gamma,
            noise,
            episodes,
            config,
        } => {
            if let (Some(epsilon), Some(kappa), Some(k_prime)) = (epsilon, kappa, k_prime) {
                let b = risk_bound(&BoundInputs {
                    epsilon,
                    kappa,
                    k_prime,
                    gamma,
                })?;
                println!("{b}");
                return Ok(());
            }
            if epsilon.is_some() || kappa.is_some() || k_prime.is_some() {
                bail!("--epsilon, --kappa and --k-prime go together");
            }
            let cfg = load_config(config.as_deref(), Mode::Haco)?;
            let maps = build_maps(&cfg.train_seeds, &cfg.difficulty, &cfg.env)?;
            let configs = noise.iter().map(|s| parse_noise(s)).collect::<Result<Vec<_>>>()?;
            let settings = VerifySettings {
                gamma,
                n_episodes: episodes,
                ..Default::default()
            };
            let reports = verify_bound(&configs, &cfg.guardian, &cfg.env, &maps, &settings)?;
            println!("{}", RiskReport::CSV_HEADER);
            for r in &reports {
                println!("{}", r.csv_row());
            }
        }
        Cmd::Heatmap {
            config,
            checkpoint,
            map_seed,
            rows,
            cols,
            out,
        } => {
            let cfg = load_config(config.as_deref(), Mode::Haco)?;
            let learner = LearnerState::from_checkpoint(&Checkpoint::load(&checkpoint)?, None)?;
            let map = build_maps(&[map_seed], &cfg.difficulty, &cfg.env)?.remove(0);
            let cells = export_q_heatmap(&learner, &map, &cfg.env, rows, cols)?;
            write_file(&out, &heatmap_csv(&cells))?;
        }
        Cmd::RecordDemos { config, steps, out } => {
            let cfg = load_config(config.as_deref(), Mode::BehaviorCloning)?;
            let maps = build_maps(&cfg.train_seeds, &cfg.difficulty, &cfg.env)?;
            let mut guardian = ScriptedGuardian::new(cfg.guardian);
            let log = record_demonstrations(&mut guardian, &cfg.env, &maps, steps);
            let mut w = BufWriter::new(File::create(&out)?);
            log.write(&mut w)?;
            w.flush()?;
            println!("{} records", log.records.len());
        }
        Cmd::Serve {
            config,
            addr,
            tick_hz,
            lockstep,
            update_budget_ms,
            max_ticks,
            log,
            checkpoint,
        } => {
            let cfg = load_config(config.as_deref(), Mode::Haco)?;
            let opts = ServeOptions {
                pacing: if lockstep {
                    Pacing::Lockstep
                } else {
                    Pacing::Realtime { tick_hz }
                },
                update_budget: Duration::from_millis(update_budget_ms),
                max_ticks,
                log_path: log,
                checkpoint_path: checkpoint,
                ..Default::default()
            };
            let report = serve(&cfg, &addr, &opts)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Cmd::Replay {
            config,
            log,
            out,
            expect,
        } => {
            let cfg = load_config(config.as_deref(), Mode::Haco)?;
            let session = SessionLog::read(BufReader::new(File::open(&log)?))?;
            let trainer = replay_session(&session, &cfg)?;
            let ckpt = trainer.learner.to_checkpoint(&cfg.hash());
            ckpt.save(&out)?;
            if let Some(e) = expect {
                if Checkpoint::load(&e)?.to_bytes() != ckpt.to_bytes() {
                    bail!("replayed checkpoint differs from {}", e.display());
                }
                println!("replay matches {}", e.display());
            }
        }
    }
    Ok(())
}
