use std::path::Path;
use std::process::{Command, Output};

fn humanmpc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_humanmpc")).current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn generate_simulate_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = humanmpc(d, &["gen-scenarios", "--n", "2", "--humans", "1", "--seed", "7", "--out", "scen"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("scen/001.json").exists() && d.join("scen/002.json").exists());

    let o = humanmpc(d, &["simulate", "--scenario", "scen/001.json", "--method", "ours", "--out", "runs"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = humanmpc(d, &["batch", "--scenarios", "scen", "--methods", "none,rc-simplified", "--jobs", "1", "--out", "runs"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let logs = std::fs::read_dir(d.join("runs")).unwrap().count();
    assert_eq!(logs, 5);

    let o = humanmpc(d, &["report", "--runs", "runs", "--out", "table.csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(d.join("table.csv")).unwrap();
    assert!(csv.starts_with("method,"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn generation_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["a", "b"] {
        assert_eq!(code(&humanmpc(d, &["gen-scenarios", "--n", "3", "--humans", "2", "--seed", "11", "--out", out])), 0);
    }
    for name in ["001.json", "002.json", "003.json"] {
        assert_eq!(std::fs::read(d.join("a").join(name)).unwrap(), std::fs::read(d.join("b").join(name)).unwrap());
    }
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&humanmpc(d, &["gen-scenarios", "--n", "1", "--out", "scen"])), 0);
    assert_eq!(code(&humanmpc(d, &["simulate", "--scenario", "scen/001.json", "--method", "teleport"])), 2);
    assert_eq!(code(&humanmpc(d, &["simulate", "--scenario", "missing.json"])), 2);
    assert_eq!(code(&humanmpc(d, &["sweep-horizon", "--scenarios", "scen", "--values", "0,5"])), 2);
    assert_eq!(code(&humanmpc(d, &["report", "--runs", "scen", "--out", "t.csv"])), 2);
    assert_eq!(code(&humanmpc(d, &["batch", "--bogus-flag"])), 2);
    std::fs::write(d.join("broken.json"), "{ not json").unwrap();
    assert_eq!(code(&humanmpc(d, &["simulate", "--scenario", "broken.json"])), 2);
    std::fs::write(d.join("space.json"), r#"{"walker_speed": [0.5, 3.0]}"#).unwrap();
    assert_eq!(code(&humanmpc(d, &["gen-scenarios", "--n", "1", "--space", "space.json", "--out", "x"])), 2);
}

#[test]
fn empty_scenario_space_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // Every walker stands on the start point at t = 0.
    std::fs::write(d.join("space.json"), r#"{"crossing_fraction": [0.0, 0.0], "crossing_time": [0.0, 0.0]}"#).unwrap();
    let o = humanmpc(d, &["gen-scenarios", "--n", "1", "--space", "space.json", "--out", "x"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}
