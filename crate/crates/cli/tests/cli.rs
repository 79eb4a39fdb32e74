use std::path::Path;
use std::process::{Command, Output};

fn gridshield(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridshield"))
        .args(args)
        .current_dir(cwd)
        .env_remove("GRIDSHIELD_SEED")
        .output()
        .unwrap()
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn run_writes_outputs_and_milestones() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gridshield(&["run", "canadian_urban", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("o");
    for f in ["timeseries.csv", "events.log", "summary.txt", "summary.json"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let csv = std::fs::read_to_string(dir.join("timeseries.csv")).unwrap();
    assert!(csv.starts_with("# gridshield-csv v1\nt,v0,f0,p0,q0,thd0,status0,flag0,v1,"));
    let m = &summary(&dir)["milestones"];
    for (key, t) in [("attack_onset", 0.10), ("isolation", 0.14), ("bess_pickup", 0.16), ("handover", 0.25)] {
        assert!((m[key].as_f64().unwrap() - t).abs() < 1e-6, "{key}: {}", m[key]);
    }
    let text = std::fs::read_to_string(dir.join("summary.txt")).unwrap();
    assert!(text.contains("isolation         0.1400 s"));
}

#[test]
fn short_override_runs_ten_steps() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gridshield(
        &["run", "canadian_urban", "--out", "o", "--override", "sim.duration=0.001"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(summary(&tmp.path().join("o"))["steps"], 10);
}

#[test]
fn missing_scenario_is_a_usage_error_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gridshield(&["run", "no/such.scn", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("o").exists());
    assert_eq!(gridshield(&["run"], tmp.path()).status.code(), Some(2));
}

#[test]
fn unservable_deficit_has_its_own_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gridshield(
        &[
            "run",
            "canadian_urban",
            "--out",
            "o",
            "--override",
            "bess.p_max_mw=1.0",
            "--override",
            "agents.criticality=1.0",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(summary(&tmp.path().join("o"))["unservable_deficit"], true);
}

#[test]
fn frequency_violation_has_its_own_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gridshield(
        &[
            "run",
            "canadian_urban",
            "--out",
            "o",
            "--override",
            "bess.soc_init=0.20002",
            "--override",
            "bess.horizon=0.01",
            "--override",
            "bess.t_lim=0.08",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(5));
    let log = std::fs::read_to_string(tmp.path().join("o/events.log")).unwrap();
    assert!(log.contains("\"bess-limit\"") && log.contains("\"frequency-violation\""));
}

#[test]
fn seed_comes_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_gridshield"))
        .args(["run", "two_dg", "--out", "o"])
        .current_dir(tmp.path())
        .env("GRIDSHIELD_SEED", "42")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(summary(&tmp.path().join("o"))["seed"], 42);
}

#[test]
fn degenerate_sweep_is_one_attack_free_row() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gridshield(
        &["sweep", "canadian_urban", "--additive", "0:0:1", "--scaling", "1:1:1", "--out", "s"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(tmp.path().join("s/heatmap.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "a_a,scale_factor,dV_pu,df_hz,diverged");
    assert_eq!(lines.len(), 2);
    let cols: Vec<f64> = lines[1].split(',').map(|c| c.parse().unwrap()).collect();
    assert_eq!(&cols[..2], &[0.0, 1.0]);
    assert!(cols[2] < 1e-3 && cols[3] < 1e-3 && cols[4] == 0.0);
}

#[test]
fn full_grid_counts_and_reproduces() {
    let tmp = tempfile::tempdir().unwrap();
    let args = |out: &'static str, jobs: &'static str| {
        [
            "sweep",
            "two_dg",
            "--additive",
            "-0.05:0.05:21",
            "--scaling",
            "0.9:1.1:21",
            "--jobs",
            jobs,
            "--out",
            out,
            "--override",
            "sweep.duration=0.12",
        ]
    };
    assert_eq!(gridshield(&args("a", "2"), tmp.path()).status.code(), Some(0));
    assert_eq!(gridshield(&args("b", "5"), tmp.path()).status.code(), Some(0));
    let a = std::fs::read(tmp.path().join("a/heatmap.csv")).unwrap();
    let b = std::fs::read(tmp.path().join("b/heatmap.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 442);
}

#[test]
fn malformed_range_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gridshield(
        &["sweep", "canadian_urban", "--additive", "0:1", "--scaling", "1:1:1"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("MIN:MAX:N"));
}

#[test]
fn calibrate_writes_baselines() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gridshield(&["calibrate", "two_dg", "--out", "cal/base.json"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("cal/base.json")).unwrap()).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
    assert_eq!(v[1]["agent"], 1);
}
