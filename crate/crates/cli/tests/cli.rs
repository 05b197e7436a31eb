use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const RING: &str = "[model]\nn = 20\ncircumference_m = 400.0\n";

fn ringflow(dir: &Path, doc: &str, args: &[&str]) -> Output {
    let config = dir.join("config.in.toml");
    fs::write(&config, doc).unwrap();
    Command::new(env!("CARGO_BIN_EXE_ringflow"))
        .args(args)
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("out").join(name)).unwrap()).unwrap()
}

#[test]
fn analyze_reports_the_stable_zero_mode() {
    let tmp = TempDir::new().unwrap();
    let o = ringflow(tmp.path(), RING, &["analyze"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "stabilizable: true; uncontrollable modes: 1 (λ=0, stable)");
    let doc = json(tmp.path(), "analysis.json");
    assert_eq!(doc["report"]["eigenvalues"].as_array().unwrap().len(), 40);
    assert_eq!(doc["report"]["is_controllable"], false);
    assert_eq!(doc["report"]["condition"], "condition-holds");
}

#[test]
fn two_vehicle_ring_has_four_eigenvalues() {
    let tmp = TempDir::new().unwrap();
    let doc = "[model]\nn = 2\ncircumference_m = 60.0\n[target]\nv_star_mps = 5.0\n";
    let o = ringflow(tmp.path(), doc, &["analyze"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(json(tmp.path(), "analysis.json")["report"]["eigenvalues"].as_array().unwrap().len(), 4);
}

#[test]
fn sign_conditions_are_validated() {
    let tmp = TempDir::new().unwrap();
    // alpha = 0 makes a2 = alpha + beta equal to a3 = beta
    let o = ringflow(tmp.path(), &format!("{RING}alpha_per_s = 0.0\n"), &["analyze"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("alpha"), "{}", stderr(&o));
}

#[test]
fn unknown_keys_are_config_errors() {
    let tmp = TempDir::new().unwrap();
    let o = ringflow(tmp.path(), &format!("{RING}[target]\nv_star = 15.0\n"), &["reach"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("v_star"), "{}", stderr(&o));
    let o = ringflow(tmp.path(), RING, &["reach", "--dt", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("scenario.dt_s"));
}

#[test]
fn reach_values() {
    let tmp = TempDir::new().unwrap();
    let o = ringflow(tmp.path(), RING, &["reach"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = &json(tmp.path(), "reach.json")["report"];
    assert!((r["cav_spacing"].as_f64().unwrap() - 20.0).abs() < 1e-9);
    assert!((r["v_max"].as_f64().unwrap() - 16.65).abs() < 0.01);
    assert!((r["v_max"].as_f64().unwrap() - r["v_max_closed_form"].as_f64().unwrap()).abs() < 1e-6);

    let o = ringflow(tmp.path(), &format!("{RING}[target]\nv_star_mps = 0.0\n"), &["reach"]);
    assert_eq!(o.status.code(), Some(0));
    assert!((json(tmp.path(), "reach.json")["report"]["cav_spacing"].as_f64().unwrap() - 305.0).abs() < 1e-9);

    let o = ringflow(tmp.path(), &format!("{RING}[target]\nv_star_mps = 17.0\n"), &["reach"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("16.65"), "{}", stderr(&o));
}

#[test]
fn unreachable_target_needs_the_flag_and_an_override() {
    let tmp = TempDir::new().unwrap();
    let doc = format!("{RING}[target]\nv_star_mps = 16.8\n");
    assert_eq!(ringflow(tmp.path(), &doc, &["analyze"]).status.code(), Some(3));
    assert_eq!(ringflow(tmp.path(), &doc, &["analyze", "--allow-unreachable"]).status.code(), Some(3));
    let doc = format!("{doc}cav_spacing_m = 10.0\n");
    assert_eq!(ringflow(tmp.path(), &doc, &["analyze"]).status.code(), Some(3));
    let o = ringflow(tmp.path(), &doc, &["analyze", "--allow-unreachable"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(json(tmp.path(), "analysis.json")["s_star_m"][0], 10.0);
}

#[test]
fn synthesis_pattern_and_topology_ordering() {
    let tmp = TempDir::new().unwrap();
    let o = ringflow(tmp.path(), RING, &["synthesize"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let restricted = json(tmp.path(), "synthesis.json");
    assert_eq!(restricted["nonzero_blocks"], 11);
    let gain = restricted["gain"].as_array().unwrap();
    assert_eq!(gain.len(), 40);
    // vehicles 7..=15 are out of sight
    assert!(gain[12..30].iter().all(|g| g.as_f64().unwrap() == 0.0));

    let o = ringflow(tmp.path(), &format!("{RING}[controller]\ntopology = \"full\"\n"), &["synthesize"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let full = json(tmp.path(), "synthesis.json");
    assert_eq!(full["nonzero_blocks"], 20);
    assert!(full["certified_cost"].as_f64().unwrap() <= restricted["certified_cost"].as_f64().unwrap());
}

#[test]
fn lone_cav_on_an_unstable_pool_is_infeasible() {
    let tmp = TempDir::new().unwrap();
    let doc = format!("{RING}[controller]\ntopology = \"explicit\"\nvehicles = [1]\n");
    let o = ringflow(tmp.path(), &doc, &["synthesize"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("infeasible"), "{}", stderr(&o));
}

#[test]
fn outputs_carry_the_same_model_hash() {
    let tmp = TempDir::new().unwrap();
    assert!(ringflow(tmp.path(), RING, &["analyze"]).status.success());
    assert!(ringflow(tmp.path(), RING, &["synthesize"]).status.success());
    let a = json(tmp.path(), "analysis.json");
    let s = json(tmp.path(), "synthesis.json");
    assert_eq!(a["stamp"]["model_sha256"], s["stamp"]["model_sha256"]);
    assert_eq!(a["stamp"]["config_sha256"], s["stamp"]["config_sha256"]);
    assert_eq!(s["stamp"]["config"]["model"]["n"], 20);
}

#[test]
fn gain_file_must_match_the_model() {
    let tmp = TempDir::new().unwrap();
    assert!(ringflow(tmp.path(), RING, &["synthesize"]).status.success());
    let gain = tmp.path().join("gain.json");
    fs::copy(tmp.path().join("out/synthesis.json"), &gain).unwrap();
    let reuse = format!("[controller]\ngain_file = {:?}\n[scenario]\nduration_s = 5.0\n", gain.to_str().unwrap());

    let o = ringflow(tmp.path(), &format!("{RING}{reuse}"), &["simulate"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let other = format!("[model]\nn = 20\ncircumference_m = 410.0\n{reuse}");
    let o = ringflow(tmp.path(), &other, &["simulate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("synthesized for model"), "{}", stderr(&o));
}

#[test]
fn exported_config_reproduces_the_trace() {
    let tmp = TempDir::new().unwrap();
    let doc = format!(
        "{RING}seed = 7\n[model.heterogeneity]\n[controller]\nenabled = false\n\
         [scenario]\nduration_s = 30.0\ninitial = \"random-velocity\"\nnoise_std_mps2 = 0.3\n"
    );
    let o = ringflow(tmp.path(), &doc, &["simulate", "--seed", "11"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let first = fs::read(tmp.path().join("out/trace.csv")).unwrap();
    let exported = fs::read_to_string(tmp.path().join("out/config.toml")).unwrap();
    assert!(exported.contains("seed = 11"));

    let again = TempDir::new().unwrap();
    let o = ringflow(again.path(), &exported, &["simulate"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(first, fs::read(again.path().join("out/trace.csv")).unwrap());

    let o = ringflow(again.path(), &exported, &["simulate", "--seed", "12"]);
    assert!(o.status.success());
    assert_ne!(first, fs::read(again.path().join("out/trace.csv")).unwrap());
}

#[test]
fn trace_files_follow_the_export_format() {
    let tmp = TempDir::new().unwrap();
    let doc = format!("{RING}[controller]\nenabled = false\n[scenario]\nduration_s = 2.0\n");
    assert!(ringflow(tmp.path(), &doc, &["simulate"]).status.success());
    let csv = fs::read_to_string(tmp.path().join("out/trace.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 2 + 3 * 20);
    assert_eq!((header[0], header[1], header[61]), ("t", "p_1", "u"));
    assert_eq!(lines.count(), 21);
    let sidecar = json(tmp.path(), "trace.json");
    assert_eq!(sidecar["samples"], 21);
    assert_eq!(sidecar["stamp"]["command"], "simulate");
}

#[test]
fn experiment_a_reaches_a_higher_target() {
    let tmp = TempDir::new().unwrap();
    let doc = "[model]\nn = 20\ncircumference_m = 400.0\nseed = 7\n[model.heterogeneity]\n[target]\nv_star_mps = 16.0\n";
    let o = ringflow(tmp.path(), doc, &["experiment", "A"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = &json(tmp.path(), "experiment_a.json")["metrics"];
    let mean = m["final_mean_velocity"].as_f64().unwrap();
    let spread = m["final_velocity_spread"].as_f64().unwrap();
    assert!((mean - 16.0).abs() + spread <= 0.1, "{mean} +/- {spread}");
}

#[test]
fn experiment_b_wave_comes_and_goes() {
    let tmp = TempDir::new().unwrap();
    let doc = "[model]\nn = 20\ncircumference_m = 400.0\nseed = 7\n[model.heterogeneity]\n";
    let o = ringflow(tmp.path(), doc, &["experiment", "B"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let p = &json(tmp.path(), "experiment_b_phases.json")["velocity_std_mps"];
    let (on, off, end) = (p["before_on"].as_f64().unwrap(), p["before_off"].as_f64().unwrap(), p["end"].as_f64().unwrap());
    assert!(off < 0.5 * on && end > 2.0 * off, "{on} {off} {end}");
}

#[test]
fn experiment_c_sweeps_every_follower() {
    let tmp = TempDir::new().unwrap();
    let doc = "[model]\nn = 20\ncircumference_m = 400.0\nseed = 7\n[model.heterogeneity]\n[output]\nwrite_traces = false\n";
    let o = ringflow(tmp.path(), doc, &["experiment", "c"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = fs::read_to_string(tmp.path().join("out/experiment_c_sweep.csv")).unwrap();
    let rows: Vec<Vec<&str>> = table.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 19);
    for (k, r) in rows.iter().enumerate() {
        assert_eq!(r[0].parse::<usize>().unwrap(), k + 2);
        let on: f64 = r[2].parse().unwrap();
        let off: f64 = r[4].parse().unwrap();
        assert!(on < off);
    }
    assert!(!tmp.path().join("out/experiment_c_v02_on.csv").exists());
}
