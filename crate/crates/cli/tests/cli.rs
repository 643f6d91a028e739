//! End-to-end tests of the command-line interface: output formats, exit
//! codes and determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use emdex::forward::{forward_fields, Dipole, DipoleType, Environment};
use emdex::scan::{make_cylinder, read_dataset, uniform_azimuths, write_dataset};
use nalgebra::Vector3;
use num_complex::Complex64;

fn emdex() -> Command {
    Command::new(env!("CARGO_BIN_EXE_emdex"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("failed to spawn emdex")
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

const SMALL_SCENE: &str = r#"{
  "frequency_hz": 781250000.0,
  "ground": true,
  "sources": [
    {"dipole": {"kind": "PX", "position": [0.25, 0.0, 1.5], "magnitude": 1.0, "phase_deg": 90.0}},
    {"dipole": {"kind": "MY", "position": [-0.25, 0.0, 1.5], "magnitude": 100.0, "phase_deg": 0.0}}
  ],
  "noise_db": 0.5,
  "seed": 7,
  "surfaces": [
    {"label": "surface1", "cylinder": {"radius": 0.5, "heights": {"start": 1.0, "stop": 3.0, "step": 0.5}, "azimuths": {"count": 12}}},
    {"label": "surface2", "cylinder": {"radius": 1.0, "heights": {"start": 1.0, "stop": 3.0, "step": 0.5}, "azimuths": {"count": 12}}}
  ]
}"#;

#[test]
fn synth_is_deterministic_and_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene.json");
    write(&scene, SMALL_SCENE);
    for out in ["a", "b"] {
        let st = run(emdex()
            .args(["synth", "--config"])
            .arg(&scene)
            .args(["--out-dir"])
            .arg(dir.path().join(out)));
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    }
    for surf in ["surface1.csv", "surface2.csv"] {
        let a = std::fs::read(dir.path().join("a").join(surf)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(surf)).unwrap();
        assert_eq!(a, b, "{surf} differs between identical runs");
    }
    let ds = read_dataset(dir.path().join("a/surface1.csv"), false).unwrap();
    assert_eq!(ds.surface.len(), 5 * 12);
    // a different seed changes the noise draw
    let st = run(emdex()
        .args(["synth", "--config"])
        .arg(&scene)
        .args(["--seed", "8", "--out-dir"])
        .arg(dir.path().join("c")));
    assert!(st.status.success());
    let a = std::fs::read(dir.path().join("a/surface1.csv")).unwrap();
    let c = std::fs::read(dir.path().join("c/surface1.csv")).unwrap();
    assert_ne!(a, c);
}

#[test]
fn synth_single_point_surface() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene.json");
    write(
        &scene,
        r#"{
          "frequency_hz": 1e9,
          "sources": [{"dipole": {"kind": "PZ", "position": [0, 0, 0], "magnitude": 1.0, "phase_deg": 0.0}}],
          "surfaces": [{"cylinder": {"radius": 1.0, "heights": [1.0], "azimuths": [0.0]}}]
        }"#,
    );
    let st = run(emdex()
        .args(["synth", "--config"])
        .arg(&scene)
        .args(["--out-dir"])
        .arg(dir.path()));
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let text = std::fs::read_to_string(dir.path().join("surface1.csv")).unwrap();
    assert_eq!(text.lines().count(), 3); // frequency + header + 1 row
}

/// Small two-surface ground-truth pair used by solve/extract tests.
fn small_problem_files(dir: &Path) -> (PathBuf, PathBuf, Vec<Dipole>) {
    let env = Environment::new(true, 781.25e6).unwrap();
    let heights: Vec<f64> = (0..5).map(|i| 1.0 + 0.5 * i as f64).collect();
    let dipoles = vec![Dipole::new(
        DipoleType::PZ,
        Vector3::new(0.05, -0.1, 1.45),
        Complex64::from_polar(0.01, 0.4),
    )
    .unwrap()];
    let mut paths = Vec::new();
    for (label, radius) in [("surface1", 0.5), ("surface2", 1.0)] {
        let surface = make_cylinder(radius, &heights, &uniform_azimuths(10), Vector3::zeros())
            .unwrap()
            .with_label(label);
        let ds = forward_fields(&dipoles, &surface, &env).unwrap();
        let path = dir.join(format!("{label}.csv"));
        write_dataset(&ds, &path).unwrap();
        paths.push(path);
    }
    (paths.remove(0), paths.remove(0), dipoles)
}

#[test]
fn solve_one_iteration_cap_gives_single_trace_row() {
    let dir = tempfile::tempdir().unwrap();
    let (s1, s2, dipoles) = small_problem_files(dir.path());
    let layout = dir.path().join("layout.json");
    emdex::forward::write_dipole_list(&dipoles, &layout).unwrap();
    let solver = dir.path().join("solver.json");
    write(&solver, r#"{"max_iterations": 1}"#);
    let out = dir.path().join("out");
    let st = run(emdex()
        .args(["solve", "--layout"])
        .arg(&layout)
        .arg(&s1)
        .arg(&s2)
        .args(["--ground", "--config"])
        .arg(&solver)
        .args(["--out-dir"])
        .arg(&out));
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], "iter,re1,re2,re");
    assert_eq!(lines.len(), 2, "one header plus exactly one row");
    let fit: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();
    assert_eq!(fit["converged"], serde_json::Value::Bool(false));
    assert_eq!(fit["iterations"], 1);
}

#[test]
fn solve_exact_layout_reaches_tiny_relative_error() {
    let dir = tempfile::tempdir().unwrap();
    let (s1, s2, dipoles) = small_problem_files(dir.path());
    let layout = dir.path().join("layout.json");
    emdex::forward::write_dipole_list(&dipoles, &layout).unwrap();
    let out = dir.path().join("out");
    let st = run(emdex()
        .args(["solve", "--layout"])
        .arg(&layout)
        .arg(&s1)
        .arg(&s2)
        .args(["--ground", "--out-dir"])
        .arg(&out));
    assert!(st.status.success());
    let fit: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();
    assert!(fit["re"].as_f64().unwrap() < 1e-4);
    assert_eq!(fit["converged"], serde_json::Value::Bool(true));
    // single-surface path drops re2
    let st = run(emdex()
        .args(["solve", "--layout"])
        .arg(&layout)
        .arg(&s1)
        .args(["--ground", "--out-dir"])
        .arg(dir.path().join("single")));
    assert!(st.status.success());
    let fit: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("single/fit.json")).unwrap(),
    )
    .unwrap();
    assert!(fit["re2"].is_null());
}

#[test]
fn extract_single_dataset_uses_single_surface_path_and_caps_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let (s1, _s2, _) = small_problem_files(dir.path());
    // one dataset, cap at 1 dipole even though the data wants more: the
    // single true dipole is recoverable, so this converges by μ
    let config = dir.path().join("run.json");
    write(
        &config,
        &format!(
            r#"{{
              "datasets": ["{}"],
              "ground": true,
              "bounds": {{"x": [0.05, 0.05], "y": [-0.1, -0.1], "z": [1.45, 1.45], "kinds": ["PZ"]}},
              "ga": {{"population": 4, "max_generations": 2, "restarts": 1, "immigrants": 1, "seed": 1}},
              "mu": 0.01,
              "max_dipoles": 3
            }}"#,
            s1.display()
        ),
    );
    let out = dir.path().join("out");
    let st = run(emdex()
        .args(["extract", "--config"])
        .arg(&config)
        .args(["--out-dir"])
        .arg(&out));
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["selected_n"], 1);
    assert!(report["re2"].is_null(), "single-surface run has no RE2");
    assert!(report["fit"]["re"].as_f64().unwrap() < 1e-3);
    assert!(out.join("fitted_surface1.csv").exists());
    assert!(out.join("dipoles.json").exists());

    // repeated run with the same seed writes byte-identical outputs
    let out_b = dir.path().join("out_b");
    let st = run(emdex()
        .args(["extract", "--config"])
        .arg(&config)
        .args(["--out-dir"])
        .arg(&out_b));
    assert!(st.status.success());
    for name in ["report.json", "dipoles.json", "fitted_surface1.csv"] {
        let a = std::fs::read(out.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }

    // a two-dipole source capped at max_dipoles 1 exits with code 3
    let env = Environment::new(true, 781.25e6).unwrap();
    let heights: Vec<f64> = (0..5).map(|i| 1.0 + 0.5 * i as f64).collect();
    let two = vec![
        Dipole::new(DipoleType::PX, Vector3::new(0.25, 0.0, 1.5), Complex64::new(0.0, 1.0))
            .unwrap(),
        Dipole::new(DipoleType::MY, Vector3::new(-0.25, 0.0, 1.5), Complex64::new(100.0, 0.0))
            .unwrap(),
    ];
    for (label, radius) in [("t1", 0.5), ("t2", 1.0)] {
        let surface = make_cylinder(radius, &heights, &uniform_azimuths(10), Vector3::zeros())
            .unwrap()
            .with_label(label);
        let ds = forward_fields(&two, &surface, &env).unwrap();
        write_dataset(&ds, dir.path().join(format!("{label}.csv"))).unwrap();
    }
    let config2 = dir.path().join("run2.json");
    write(
        &config2,
        &format!(
            r#"{{
              "datasets": ["{}", "{}"],
              "ground": true,
              "bounds": {{"x": [-0.5, 0.5], "y": [-0.5, 0.5], "z": [1.0, 2.0]}},
              "ga": {{"population": 8, "max_generations": 4, "restarts": 1, "immigrants": 2, "seed": 1}},
              "mu": 0.01
            }}"#,
            dir.path().join("t1.csv").display(),
            dir.path().join("t2.csv").display()
        ),
    );
    let st = run(emdex()
        .args(["extract", "--config"])
        .arg(&config2)
        .args(["--max-dipoles", "1", "--out-dir"])
        .arg(dir.path().join("capped")));
    assert_eq!(st.status.code(), Some(3), "{}", String::from_utf8_lossy(&st.stderr));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("capped/report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["converged_by_mu"], serde_json::Value::Bool(false));
    assert!(!report["warnings"].as_array().unwrap().is_empty());
}

#[test]
fn extract_rejects_missing_frequency_header() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    write(&bad, "x,y,z\n1,2,3\n");
    let config = dir.path().join("run.json");
    write(
        &config,
        &format!(
            r#"{{
              "datasets": ["{}"],
              "bounds": {{"x": [0, 1], "y": [0, 1], "z": [0, 1]}}
            }}"#,
            bad.display()
        ),
    );
    let st = run(emdex().args(["extract", "--config"]).arg(&config));
    assert_eq!(st.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&st.stderr);
    assert!(stderr.contains("frequency"), "stderr: {stderr}");
}

#[test]
fn phase_self_comparison_and_global_rotation() {
    let dir = tempfile::tempdir().unwrap();
    let (s1, _, dipoles) = small_problem_files(dir.path());
    let model = dir.path().join("model.json");
    emdex::forward::write_dipole_list(&dipoles, &model).unwrap();

    // model vs its own synthesis: zero residual after alignment
    let out = dir.path().join("self");
    let st = run(emdex()
        .args(["phase", "--dipoles"])
        .arg(&model)
        .args(["--truth"])
        .arg(&s1)
        .args(["--ground", "--out-dir"])
        .arg(&out));
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("alignment.json")).unwrap())
            .unwrap();
    assert!(report["combined"]["rms_deg"].as_f64().unwrap() < 1e-8);
    assert!(out.join("phase.csv").exists());

    // rotating every moment by 30° shows up as α* = 30°, zero RMS
    let rotated: Vec<Dipole> = dipoles
        .iter()
        .map(|d| {
            Dipole::new(
                d.kind,
                d.position,
                d.moment * Complex64::from_polar(1.0, 30f64.to_radians()),
            )
            .unwrap()
        })
        .collect();
    let rot_model = dir.path().join("rot.json");
    emdex::forward::write_dipole_list(&rotated, &rot_model).unwrap();
    let out2 = dir.path().join("rot");
    let st = run(emdex()
        .args(["phase", "--dipoles"])
        .arg(&rot_model)
        .args(["--truth"])
        .arg(&s1)
        .args(["--ground", "--out-dir"])
        .arg(&out2));
    assert!(st.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out2.join("alignment.json")).unwrap())
            .unwrap();
    // truth = model rotated by −30° relative to the retrieved phases
    let alpha = report["combined"]["alpha_deg"].as_f64().unwrap();
    assert!((alpha + 30.0).abs() < 1e-6, "alpha {alpha}");
    assert!(report["combined"]["rms_deg"].as_f64().unwrap() < 1e-8);
}

#[test]
fn phase_on_a_surface_spec_grid() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, dipoles) = small_problem_files(dir.path());
    let model = dir.path().join("model.json");
    emdex::forward::write_dipole_list(&dipoles, &model).unwrap();
    let spec = dir.path().join("surface.json");
    write(
        &spec,
        r#"{"cylinder": {"radius": 0.75, "heights": [1.0, 2.0], "azimuths": {"count": 8}}}"#,
    );
    let out = dir.path().join("out");
    let st = run(emdex()
        .args(["phase", "--dipoles"])
        .arg(&model)
        .args(["--surface"])
        .arg(&spec)
        .args(["--frequency-hz", "781250000", "--ground", "--out-dir"])
        .arg(&out));
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let retrieved = read_dataset(out.join("phase.csv"), false).unwrap();
    assert_eq!(retrieved.surface.len(), 16);
    assert!(retrieved.has_phases());

    // without a grid source the command is a configuration error
    let st = run(emdex().args(["phase", "--dipoles"]).arg(&model));
    assert_eq!(st.status.code(), Some(2));
}

#[test]
fn compare_identity_zero_prediction_and_grid_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let (s1, s2, dipoles) = small_problem_files(dir.path());

    let st = run(emdex().arg("compare").arg(&s1).arg(&s1));
    assert!(st.status.success());
    let stdout = String::from_utf8_lossy(&st.stdout);
    assert_eq!(stdout.trim(), "RE1 = 0");

    // all-zero test dataset: RE is exactly 1
    let ds = read_dataset(&s1, false).unwrap();
    let zero = emdex::scan::FieldDataset::new(
        ds.surface.clone(),
        ds.frequency_hz,
        vec![0.0; ds.surface.len()],
        vec![0.0; ds.surface.len()],
        None,
        None,
    )
    .unwrap();
    let zero_path = dir.path().join("zero.csv");
    write_dataset(&zero, &zero_path).unwrap();
    let st = run(emdex().arg("compare").arg(&s1).arg(&zero_path));
    assert!(st.status.success());
    assert_eq!(String::from_utf8_lossy(&st.stdout).trim(), "RE1 = 1");

    // two pairs give RE1/RE2/RE and per-point error files
    let out = dir.path().join("cmp");
    let st = run(emdex()
        .arg("compare")
        .arg(&s1)
        .arg(&s1)
        .arg(&s2)
        .arg(&s2)
        .args(["--out-dir"])
        .arg(&out));
    assert!(st.status.success());
    let stdout = String::from_utf8_lossy(&st.stdout);
    assert!(stdout.contains("RE2 = 0"));
    assert!(stdout.contains("RE = 0"));
    let err1 = std::fs::read_to_string(out.join("err1.csv")).unwrap();
    assert!(err1.starts_with("x,y,z,err_u,err_v\n"));
    assert!(out.join("err2.csv").exists());

    // different grids are a hard error naming the first mismatch
    let st = run(emdex().arg("compare").arg(&s1).arg(&s2));
    assert_eq!(st.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&st.stderr);
    assert!(stderr.contains("point 0"), "stderr: {stderr}");

    // fitted-vs-input RE reproduces the solver's reported value
    let model = dir.path().join("model.json");
    emdex::forward::write_dipole_list(&dipoles, &model).unwrap();
    let solve_out = dir.path().join("solve");
    let st = run(emdex()
        .args(["solve", "--layout"])
        .arg(&model)
        .arg(&s1)
        .arg(&s2)
        .args(["--ground", "--out-dir"])
        .arg(&solve_out));
    assert!(st.status.success());
}
