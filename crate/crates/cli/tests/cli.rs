use std::path::Path;
use std::process::{Command, Output};

fn spinamo(dir: &Path, cmd: &str, config: &str, extra: &[&str]) -> Output {
    let cfg = dir.join("config.json");
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_spinamo"))
        .arg(cmd)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap()
}

fn stderr_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stderr).expect("error JSON on stderr")
}

#[test]
fn empty_schedule_gives_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = spinamo(dir.path(), "evolve", r#"{"physics":{"n_atoms":10},"schedule":{"segments":[]}}"#, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/records.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "t,q,K,F_singlet,F_twinfock,xi2,pc,norm,n_current");
    let n_field = lines[1].split(',').last().unwrap();
    assert_eq!(n_field, "1.0000000000000000e1");
}

#[test]
fn manifest_records_seed_and_convention() {
    let dir = tempfile::tempdir().unwrap();
    let out = spinamo(
        dir.path(),
        "evolve",
        r#"{"seed":3,"physics":{"n_atoms":8},"schedule":{"segments":[{"kind":"hold","q":0.1,"duration":0.01}]}}"#,
        &["--seed", "42", "--convention", "plain"],
    );
    assert!(out.status.success());
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 42);
    assert_eq!(m["convention"], "plain");
    assert_eq!(m["config"]["noise"]["seed"], 42);
    assert_eq!(m["command"], "evolve");
    assert!(m["runtime"]["wall_clock_s"].as_f64().unwrap() >= 0.0);
    let rows = std::fs::read_to_string(dir.path().join("out/records.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 11);
}

#[test]
fn schema_errors_report_path_and_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = spinamo(dir.path(), "evolve", r#"{"physics":{"n_atoms":-4}}"#, &[]);
    assert_eq!(out.status.code(), Some(2));
    let e = stderr_json(&out);
    assert_eq!(e["error"], "config");
    assert_eq!(e["path"], "physics.n_atoms");

    let out = spinamo(dir.path(), "evolve", r#"{"schedule":{"segments":[{"kind":"hold","q":0.0,"duration":-1.0}]}}"#, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["path"], "schedule");

    let out = spinamo(dir.path(), "noise", r#"{"noise":{"n_trajectories":5}}"#, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_json(&out)["path"].as_str().unwrap().starts_with("noise"));
}

#[test]
fn resource_cap_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"schedule":{"segments":[{"kind":"hold","q":0.0,"duration":0.1}]},"loss":{"n_initial":400,"n_traj":2}}"#;
    let out = spinamo(dir.path(), "loss", cfg, &[]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(stderr_json(&out)["error"], "resource_cap");
}

#[test]
fn oversized_step_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"physics":{"n_atoms":200},"propagation":{"integrator":"rk4","dt":0.05},
        "schedule":{"segments":[{"kind":"linear_sweep","q_from":50.0,"q_to":0.0,"duration":0.5}]}}"#;
    let out = spinamo(dir.path(), "evolve", cfg, &[]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stderr_json(&out)["error"], "numeric");
}

#[test]
fn phase_diagram_locates_gap_minimum() {
    let dir = tempfile::tempdir().unwrap();
    let out = spinamo(dir.path(), "phase-diagram", r#"{"phase_diagram":{"n_list":[40],"points":61}}"#, &[]);
    assert!(out.status.success());
    let gap = std::fs::read_to_string(dir.path().join("out/gap.csv")).unwrap();
    assert_eq!(gap.lines().count(), 62);
    let crit = std::fs::read_to_string(dir.path().join("out/critical.csv")).unwrap();
    let row: Vec<f64> = crit.lines().nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(row[0], 40.0);
    assert!(row[3] > 0.8 && row[3] < 1.0, "ratio {}", row[3]);
}
