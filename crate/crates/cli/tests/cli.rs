use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dronebar::scenario::DisturbanceEvent;
use dronebar::{scenarios, BodyPoint, ControllerKind, ScenarioConfig};
use serde_json::Value;

fn dronebar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dronebar"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(out: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    )
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, config: &ScenarioConfig) -> PathBuf {
    let path = dir.join(format!("{}.json", config.name));
    std::fs::write(&path, config.to_json()).unwrap();
    path
}

fn manifest_outputs_exist(dir: &Path) -> Vec<String> {
    let manifest = json(&dir.join("manifest.json"));
    let outputs: Vec<String> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    for o in &outputs {
        assert!(dir.join(o).is_file(), "{o} listed but missing");
    }
    outputs
}

#[test]
fn simulate_shipped_scenario_writes_plots_and_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = dronebar(&[
        "simulate",
        "--config",
        "exp1_test1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let outputs = manifest_outputs_exist(&out);
    assert_eq!(outputs.iter().filter(|f| f.ends_with(".svg")).count(), 4);
    for f in ["metrics.json", "trajectory.csv", "config.json"] {
        assert!(outputs.iter().any(|o| o == f), "{f}");
    }
    let metrics = json(&out.join("metrics.json"));
    assert_eq!(metrics["scenario"], "exp1_test1");
    assert!(metrics["settling_time"].as_f64().unwrap() > 0.0);
    let svg = std::fs::read_to_string(out.join("swing_angles.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    let rows = std::fs::read_to_string(out.join("trajectory.csv"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(rows, 60_002);
}

#[test]
fn runs_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    for d in &dirs {
        let o = dronebar(&[
            "simulate",
            "--config",
            "exp2_test2",
            "--duration",
            "8",
            "--out",
            d.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", text(&o));
    }
    for f in ["trajectory.csv", "metrics.json", "config.json"] {
        let a = std::fs::read(dirs[0].join(f)).unwrap();
        let b = std::fs::read(dirs[1].join(f)).unwrap();
        assert!(a == b, "{f} differs between identical runs");
    }
    // The written config replays the run.
    let replay = tmp.path().join("c");
    let cfg = dirs[0].join("config.json");
    let o = dronebar(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        replay.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    assert_eq!(
        std::fs::read(replay.join("trajectory.csv")).unwrap(),
        std::fs::read(dirs[0].join("trajectory.csv")).unwrap()
    );
}

#[test]
fn json_format_and_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("j");
    let o = dronebar(&[
        "simulate",
        "--config",
        "hover",
        "--controller",
        "pd",
        "--dt",
        "0.002",
        "--duration",
        "1",
        "--format",
        "json",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let log = json(&out.join("trajectory.json"));
    assert_eq!(log["controller"], "pd");
    assert_eq!(log["dt"], 0.002);
    assert_eq!(log["records"].as_array().unwrap().len(), 501);
    assert!(!out.join("trajectory.csv").exists());
}

#[test]
fn malformed_config_names_the_location() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    let mut text_cfg = scenarios::hover().to_json();
    text_cfg = text_cfg.replacen("\"duration\"", "\"duraton\"", 1);
    std::fs::write(&bad, text_cfg).unwrap();
    let o = dronebar(&[
        "simulate",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let msg = text(&o);
    assert!(msg.contains("duraton") && msg.contains("line"), "{msg}");
}

#[test]
fn barrier_precondition_refuses_to_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = scenarios::exp1_test1();
    config.name = "tight".into();
    config.gains.rho = 0.01;
    let path = write_config(tmp.path(), &config);
    let out = tmp.path().join("out");
    let o = dronebar(&[
        "simulate",
        "--config",
        path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("rho = 0.01 must exceed"), "{}", text(&o));
    assert!(!out.join("trajectory.csv").exists());
}

#[test]
fn unknown_scenario_and_bad_flags_are_usage_errors() {
    assert_eq!(
        dronebar(&["simulate", "--config", "nowhere"]).status.code(),
        Some(1)
    );
    assert_eq!(
        dronebar(&["simulate", "--config", "hover", "--controller", "lqr"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(dronebar(&["verify", "bogus"]).status.code(), Some(1));
    assert_eq!(dronebar(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn simulation_fault_keeps_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = scenarios::hover().with_controller(ControllerKind::Pd);
    config.name = "shove".into();
    config.disturbances.push(DisturbanceEvent::Impulse {
        point: BodyPoint::BarMid,
        force: [400.0, 0.0],
        start: 0.1,
        duration: 1.0,
    });
    let path = write_config(tmp.path(), &config);
    let out = tmp.path().join("out");
    let o = dronebar(&[
        "simulate",
        "--config",
        path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    manifest_outputs_exist(&out);
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["passed"], false);
    assert!(text(&o).contains("outside the admissible range"));
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(csv.lines().count() > 2);
}

#[test]
fn compare_reports_settling_ratio() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("cmp");
    let o = dronebar(&[
        "compare",
        "--config",
        "exp1_test1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    manifest_outputs_exist(&out);
    let c = json(&out.join("comparison.json"));
    let ratio = c["settling_ratio"].as_f64().unwrap();
    let a = c["proposed"]["settling_time"].as_f64().unwrap();
    let b = c["pd"]["settling_time"].as_f64().unwrap();
    assert_eq!(ratio, a / b);
    assert!(text(&o).contains("overall"));
    let table = std::fs::read_to_string(out.join("settling_ratio.csv")).unwrap();
    assert_eq!(table.lines().count(), 9);
    for f in [
        "compare_positions.svg",
        "compare_swing_angles.svg",
        "compare_controls.svg",
        "compare_energy.svg",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn identical_controllers_give_unit_ratio() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = scenarios::exp1_test1();
    config.name = "plain".into();
    config.gains.ka1 = 0.0;
    config.gains.ka2 = 0.0;
    config.gains.sigma = 0.0;
    let path = write_config(tmp.path(), &config);
    let out = tmp.path().join("cmp");
    let o = dronebar(&[
        "compare",
        "--config",
        path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let c = json(&out.join("comparison.json"));
    assert_eq!(c["settling_ratio"].as_f64(), Some(1.0));
    let strip = |f: &str| {
        let csv = std::fs::read_to_string(out.join(f)).unwrap();
        // Identical trajectories; only the Lyapunov and barrier columns differ.
        csv.lines()
            .map(|l| l.split(',').take(21).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
    };
    assert_eq!(strip("proposed_trajectory.csv"), strip("pd_trajectory.csv"));
}

#[test]
fn compare_tabulates_recovery_after_each_pulse() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("cmp");
    let o = dronebar(&[
        "compare",
        "--config",
        "exp1_test3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let table = std::fs::read_to_string(out.join("recovery.csv")).unwrap();
    // Header plus five pulses under each controller.
    assert_eq!(table.lines().count(), 11);
    assert!(table
        .lines()
        .next()
        .unwrap()
        .starts_with("controller,start,end,recovery_s,swing_decay_s"));
    let c = json(&out.join("comparison.json"));
    assert_eq!(c["recovery_proposed"].as_array().unwrap().len(), 5);
}

#[test]
fn verify_single_suite_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dronebar(&[
        "verify",
        "lemma1",
        "--samples",
        "2000",
        "--seed",
        "3",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let reports = json(&tmp.path().join("verify.json"));
    let reports = reports.as_array().unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0]["check"], "lemma1");
    assert_eq!(reports[0]["passed"], true);
    let manifest = json(&tmp.path().join("manifest.json"));
    assert_eq!(manifest["seed"], 3);
}

#[test]
fn verify_dynamics_passes_and_corruption_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let good = tmp.path().join("good");
    let o = dronebar(&[
        "verify",
        "dynamics",
        "--samples",
        "500",
        "--out",
        good.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));

    let bad = tmp.path().join("bad");
    let o = dronebar(&[
        "verify",
        "dynamics",
        "--samples",
        "500",
        "--corrupt-inertia",
        "--out",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", text(&o));
    assert!(text(&o).contains("offending"));
    let reports = json(&bad.join("verify.json"));
    assert!(reports[0]["offending"]["values"].as_array().unwrap().len() == 10);
    assert_eq!(json(&bad.join("manifest.json"))["passed"], false);
}

#[test]
fn scenarios_export_matches_shipped_files() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dronebar(&["scenarios", "--out", tmp.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    for name in scenarios::NAMES {
        let file = format!("{name}.json");
        assert_eq!(
            std::fs::read(tmp.path().join(&file)).unwrap(),
            std::fs::read(shipped.join(&file)).unwrap(),
            "{file}"
        );
    }
    let listing = dronebar(&["scenarios"]);
    assert_eq!(
        String::from_utf8_lossy(&listing.stdout).lines().count(),
        scenarios::NAMES.len()
    );
}
