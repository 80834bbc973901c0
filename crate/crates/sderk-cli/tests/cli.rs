//! Black-box checks of the command-line surface and exit codes.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sderk"))
}

fn workspace_file(rel: &str) -> String {
    format!("{}/../../{rel}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn single_trajectory_runs_are_bitwise_identical() {
    let run = |out: &std::path::Path| {
        let status = bin()
            .args([
                "example", "absorber",
                "--trajectories", "1",
                "--chunks", "4",
                "--horizon", "1.0",
                "--rtol", "1e-6",
                "--atol", "1e-9",
                "--seed", "77",
                "--out", out.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(out).unwrap()
    };
    let dir = std::env::temp_dir();
    let a = run(&dir.join("sderk_cli_a.csv"));
    let b = run(&dir.join("sderk_cli_b.csv"));
    assert_eq!(a, b);
    // vacuum start: the t = 0 row reports zero occupation for both the
    // ensemble and the oracle, and zero standard error for one trajectory
    let text = String::from_utf8(a).unwrap();
    let first_row = text
        .lines()
        .skip_while(|l| l.starts_with('#'))
        .nth(1)
        .unwrap();
    let cols: Vec<&str> = first_row.split(',').collect();
    assert_eq!(cols[0].parse::<f64>().unwrap(), 0.0);
    assert_eq!(cols[1].parse::<f64>().unwrap(), 0.0);
    assert!(cols[2] == "nan");
    assert_eq!(cols[3].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn missing_tableau_file_exits_with_io_code() {
    let output = bin()
        .args(["example", "absorber", "--tableau", "/nonexistent/path.tab"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("/nonexistent/path.tab"), "stderr: {stderr}");
}

#[test]
fn validate_passes_shipped_files() {
    for name in ["rk4.tab", "dp54.tab", "rkf87.tab", "xrkf98.tab"] {
        let output = bin().args(["validate", &workspace_file(&format!("tableaus/{name}"))]).output().unwrap();
        assert_eq!(output.status.code(), Some(0), "{name}");
        let stdout = String::from_utf8_lossy(&output.stdout);
        assert!(stdout.contains("PASS"), "{name}: {stdout}");
    }
}

#[test]
fn validate_rejects_corrupted_row_sum() {
    let good = std::fs::read_to_string(workspace_file("tableaus/rk4.tab")).unwrap();
    // corrupt the single entry of coupling row 2
    let bad = good.replace("a 2 5.0000000000000000000e-1", "a 2 5.0010000000000000000e-1");
    assert_ne!(good, bad);
    let path = std::env::temp_dir().join("sderk_bad_rowsum.tab");
    std::fs::write(&path, bad).unwrap();
    let output = bin().args(["validate", path.to_str().unwrap()]).output().unwrap();
    assert_eq!(output.status.code(), Some(4));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("row-sum"), "stdout: {stdout}");
}

#[test]
fn unknown_flag_exits_with_config_code() {
    let output = bin().args(["example", "absorber", "--bogus", "1"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let cfg = std::env::temp_dir().join("sderk_cli.cfg");
    std::fs::write(&cfg, "trajectories=2\nchunks=4\nT=1.0\nrtol=1e-6\natol=1e-9\nmaster_seed=5\n").unwrap();
    let out = std::env::temp_dir().join("sderk_cli_cfg.csv");
    let status = bin()
        .args([
            "example", "absorber",
            "--config", cfg.to_str().unwrap(),
            "--trajectories", "3",
            "--out", out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("# trajectories = 3"), "flag did not override file");
    assert!(text.contains("# chunks = 4"), "file value lost");
}

#[test]
fn converge_emits_ladder_and_summary() {
    let output = bin()
        .args(["converge", "gbm", "--trajectories", "100", "--tableau", &workspace_file("tableaus/rk4.tab")])
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("h,mean_error,n_paths"), "{stdout}");
    assert!(stdout.lines().last().unwrap().starts_with("slope="), "{stdout}");
}
