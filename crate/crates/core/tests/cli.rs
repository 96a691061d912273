use std::path::Path;
use std::process::Command;

use primtrack::config::RunConfig;

fn primtrack(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_primtrack")).args(args).output().unwrap()
}

fn stdout(o: &std::process::Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn shipped_example_config_is_the_default() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/example.toml");
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(RunConfig::from_toml(&text).unwrap(), RunConfig::default());
    // Unsourced defaults carry the annotation.
    assert!(text.matches("# non-paper default").count() > 40);
}

#[test]
fn generate_env_writes_cloud_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = primtrack(&["generate-env", "--seed", "3", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cloud = primtrack::environment::PointCloud::load(dir.path().join("cloud.txt")).unwrap();
    let grid = primtrack::environment::EsdfGrid::load(dir.path().join("esdf.bin")).unwrap();
    assert!(!cloud.is_empty());
    assert_eq!(grid.resolution(), 0.2);
}

#[test]
fn navigation_run_writes_metrics_and_logs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[world]\nempty = true\n").unwrap();
    let out = dir.path().join("out");
    let o = primtrack(&["run-nav", "--config", cfg.to_str().unwrap(), "--seed", "5", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("navigation: 1/1 successful"));
    let metrics = std::fs::read_to_string(out.join("navigation_metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("5,true,none,"));
    assert!(out.join("navigation_seed5_log.csv").exists());
    assert!(out.join("navigation_seed5_summary.txt").exists());
}

#[test]
fn grad_check_exit_code_follows_result() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gc.toml");
    std::fs::write(&cfg, "[grad_check]\nfixtures = 20\n").unwrap();
    let base = ["grad-check", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()];
    let ok = primtrack(&base);
    assert!(ok.status.success());
    assert!(dir.path().join("grad_check.csv").exists());
    let mut corrupted = base.to_vec();
    corrupted.extend(["--corrupt", "collision"]);
    let bad = primtrack(&corrupted);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stdout(&bad).contains("FAIL"));
}

#[test]
fn bad_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[planner]\nspeeed = 3\n").unwrap();
    let o = primtrack(&["bench", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("speeed"));
}

#[test]
fn dataset_round_trips_through_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(
        &cfg,
        "[train]\nholdout_frames = 0\n[train.dataset]\nframes = 4\narea = [0.0, -22.0, 52.0, 22.0]\n[train.schedule]\nepochs = 2\nbatch_size = 2\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let data = dir.path().join("data");
    let o = primtrack(&["make-dataset", "--config", c, "--out", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let frames = data.join("frames");
    let trained = dir.path().join("trained");
    let o = primtrack(&[
        "train", "--config", c, "--out", trained.to_str().unwrap(), "--data", frames.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let curve = std::fs::read_to_string(trained.join("loss_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);
    assert!(trained.join("head.bin").exists());
}
