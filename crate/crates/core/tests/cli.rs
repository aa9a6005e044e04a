use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn neindex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neindex"))
        .args(args)
        .output()
        .expect("spawn neindex")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(root: &Path) -> PathBuf {
    let world = root.join("world");
    let out = neindex(&["synth", "--seed", "1", "--out", s(&world)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    world
}

#[test]
fn help_lists_every_subcommand_and_exits_zero() {
    let out = neindex(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["synth", "cluster", "optimize", "evaluate", "forecast", "oracle"] {
        assert!(text.contains(cmd), "missing {cmd}");
    }
}

#[test]
fn usage_and_config_errors_exit_two() {
    assert_eq!(neindex(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(neindex(&["optimize", "--mode", "sideways"]).status.code(), Some(2));
    assert_eq!(neindex(&["cluster"]).status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("run.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(neindex(&["--config", s(&bad), "cluster"]).status.code(), Some(2));
}

#[test]
fn missing_input_file_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.json");
    std::fs::write(&cfg, r#"{"paths": {"stations_csv": "nowhere.csv"}}"#).unwrap();
    let out = neindex(&["--config", s(&cfg), "cluster"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn synthetic_pipeline_writes_every_output() {
    let tmp = tempfile::tempdir().unwrap();
    let world = synth(tmp.path());
    let cfg = world.join("run.json");
    let out = tmp.path().join("out");
    for args in [
        vec!["cluster"],
        vec!["optimize", "--mode", "shift-only", "--timesteps", "2000"],
        vec!["evaluate"],
    ] {
        let mut full = vec!["--config", s(&cfg), "--out", s(&out)];
        full.extend(args);
        let o = neindex(&full);
        assert!(o.status.success(), "{full:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["clusters.csv", "history.csv", "best_areas.json", "objective.csv", "index.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let objective = std::fs::read_to_string(out.join("objective.csv")).unwrap();
    assert!(objective.starts_with("r_onset,r_retreat,q,valid,violation"));
    let index = std::fs::read_to_string(out.join("index.csv")).unwrap();
    assert!(index.starts_with("year,month,z"));
}

#[test]
fn forecast_skips_an_unrelated_cluster_without_failing() {
    let tmp = tempfile::tempdir().unwrap();
    let world = synth(tmp.path());
    let cfg = world.join("forecast/run.json");
    let out = tmp.path().join("out");
    let o = neindex(&["--config", s(&cfg), "--out", s(&out), "forecast", "--cluster", "2", "--with-ne"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("skip"));
    assert!(!out.join("forecast_2.csv").exists());
}

#[test]
fn forecast_report_has_both_arms_for_the_coupled_cluster() {
    let tmp = tempfile::tempdir().unwrap();
    let world = synth(tmp.path());
    let cfg = world.join("forecast/run.json");
    let out = tmp.path().join("out");
    let o = neindex(&["--config", s(&cfg), "--out", s(&out), "forecast", "--cluster", "1", "--with-ne"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(out.join("forecast_1.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("cluster_id,fold,arm,rmse_mm_month"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    for arm in ["base", "base+ne"] {
        assert!(rows.iter().any(|r| r[2] == arm && r[1] == "mean"), "no mean row for {arm}");
    }
    assert!(rows.iter().all(|r| r[3].parse::<f64>().unwrap() > 0.0));
}
