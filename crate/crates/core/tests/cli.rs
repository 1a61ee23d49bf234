use std::path::Path;
use std::process::{Command, Output};

use haco::harness::{Mode, RunConfig, CHECKPOINT_FILE, SUMMARY_FILE};

fn haco(args: &[&str], root: &Path) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_haco"))
        .args(args)
        .env("HACO_OUTPUT_ROOT", root)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let mut cfg = RunConfig::desk(Mode::Haco);
    cfg.train_seeds = vec![0, 1];
    cfg.test_seeds = vec![7];
    cfg.total_steps = 1200;
    cfg.train.learning_starts = 400;
    cfg.train.hidden = vec![16, 16];
    cfg.train.batch_size = 32;
    cfg.eval_every = 6;
    cfg.eval_episodes_per_map = 1;
    cfg.output_dir = "tiny".into();
    let path = dir.join("tiny.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

#[test]
fn bound_subcommand_prints_the_closed_form() {
    let tmp = tempfile::tempdir().unwrap();
    let out = haco(
        &[
            "verify-bound",
            "--epsilon",
            "0.01",
            "--kappa",
            "0.05",
            "--k-prime",
            "2",
            "--gamma",
            "0.99",
        ],
        tmp.path(),
    );
    let v: f64 = stdout(&out).trim().parse().unwrap();
    assert!((v - 7.98).abs() <= 1e-9);
}

#[test]
fn train_evaluate_heatmap_under_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    haco(&["train", "--config", cfg], tmp.path());
    let run_dir = tmp.path().join("tiny");
    assert!(run_dir.join(SUMMARY_FILE).exists());
    let ckpt = run_dir.join(CHECKPOINT_FILE);

    let eval = stdout(&haco(
        &[
            "evaluate",
            "--config",
            cfg,
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--episodes",
            "1",
        ],
        tmp.path(),
    ));
    assert!(eval.starts_with("map_seed,return,cost,success\n7,"), "{eval}");
    assert!(eval.contains("success "));

    let heat = tmp.path().join("heat.csv");
    haco(
        &[
            "heatmap",
            "--config",
            cfg,
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--rows",
            "4",
            "--cols",
            "5",
            "--out",
            heat.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_eq!(std::fs::read_to_string(heat).unwrap().lines().count(), 21);
}

#[test]
fn demos_and_bad_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let demos = tmp.path().join("demos.jsonl");
    let out = haco(
        &[
            "record-demos",
            "--config",
            cfg.to_str().unwrap(),
            "--steps",
            "50",
            "--out",
            demos.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_eq!(stdout(&out).trim(), "50 records");
    assert_eq!(std::fs::read_to_string(demos).unwrap().lines().count(), 51);

    let bad = Command::new(env!("CARGO_BIN_EXE_haco"))
        .args(["train", "--mode", "nope"])
        .output()
        .unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("unknown mode"));
}
