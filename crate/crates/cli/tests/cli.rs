use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tactr_core::scenario::export::{parse_csv, SolutionDocument};

fn tactr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tactr"))
        .args(args)
        .current_dir(dir)
        .env("TACTR_OUT_DIR", dir.join("default_out"))
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Straight 100 mm steel tube with an axial tendon at zero offset.
const AXIAL: &str = r#"
schema_version = 1
name = "axial"

[[tubes]]
length_mm = 100
youngs_modulus_GPa = 200
shear_modulus_GPa = 80
outer_diameter_mm = 1.0
inner_diameter_mm = 0.6

[[tendons]]
tube = 0
tension_N = 0
routing = { family = "straight", offset_mm = [0, 0] }
"#;

#[test]
fn preset_with_required_inputs_is_rejected_until_placeholders_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let o = tactr(dir.path(), &["solve", "--preset", "ctr_theta_0", "--out", "shape.csv"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("tubes.0.length_mm"), "{err}");
    assert!(err.contains("tubes.1.precurvature.radius_mm"), "{err}");
    assert!(!dir.path().join("shape.csv").exists());

    let o = tactr(
        dir.path(),
        &["solve", "--preset", "ctr_theta_0", "--accept-placeholders", "--out", "shape.csv"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = parse_csv(&fs::read_to_string(dir.path().join("shape.csv")).unwrap()).unwrap();
    assert_eq!(table.rows.len(), 1 + 2 * 200);
    assert!(stdout(&o).contains("tip [m]:"));
    assert!(stdout(&o).contains("residual norm"));
}

#[test]
fn malformed_scenarios_exit_1_with_every_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("broken.toml"), "[[tubes]\nlength_mm = ").unwrap();
    let o = tactr(dir.path(), &["solve", "broken.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("parse error at line 1"), "{}", stderr(&o));

    let invalid = AXIAL
        .replace("length_mm = 100", "length_mm = \"long\"")
        .replace("outer_diameter_mm = 1.0", "outer_diameter_furlong = 1.0");
    fs::write(dir.path().join("invalid.toml"), invalid).unwrap();
    let o = tactr(dir.path(), &["solve", "invalid.toml"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.lines().count() >= 2, "{err}");
    assert!(err.contains("tubes.0.length"), "{err}");
    assert!(err.contains("outer_diameter_furlong"), "{err}");
}

#[test]
fn bad_overrides_and_options_are_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("axial.toml"), AXIAL).unwrap();
    let o = tactr(dir.path(), &["solve", "axial.toml", "--set", "no_equals_sign"]);
    assert_eq!(o.status.code(), Some(1));
    let o = tactr(dir.path(), &["solve", "axial.toml", "--force-tol=-1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("force_tolerance"));
    let o = tactr(dir.path(), &["preset", "show", "no_such_preset"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn non_convergence_exits_2_and_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = tactr(
        dir.path(),
        &[
            "solve",
            "--preset",
            "two_tube_0",
            "--accept-placeholders",
            "--max-iterations",
            "1",
            "--out",
            "run/shape.csv",
        ],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!dir.path().join("run/shape.csv").exists());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run/shape.report.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], false);
    assert!(!report["trace"].as_array().unwrap().is_empty());
    assert_eq!(report["scenario_name"], "two_tube_0");
}

#[test]
fn helical_preset_regression() {
    let dir = tempfile::tempdir().unwrap();
    let o = tactr(
        dir.path(),
        &[
            "solve",
            "--preset",
            "two_tube_helical",
            "--accept-placeholders",
            "--steps",
            "400",
            "--out",
            "helical.json",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc: SolutionDocument =
        serde_json::from_str(&fs::read_to_string(dir.path().join("helical.json")).unwrap()).unwrap();
    assert!(doc.solution.report.converged);
    assert_eq!(doc.solution.report.options.steps_per_segment, 400);
    // Snapshot of the first verified run, in metres.
    let tip = doc.solution.tip();
    let expected = [0.057146304, -0.002645399, 0.271428714];
    for i in 0..3 {
        assert!((tip[i] - expected[i]).abs() < 1e-8, "tip {tip:?}");
    }
    assert!(stdout(&o).contains("0.057146304 -0.002645399 0.271428714"), "{}", stdout(&o));
}

#[test]
fn identical_invocations_write_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        for ext in ["csv", "json"] {
            let out = format!("{run}/shape.{ext}");
            let svg = format!("{run}/shape.{ext}.svg");
            let o = tactr(
                dir.path(),
                &["solve", "--preset", "ctr_theta_90", "--accept-placeholders", "--out", &out, "--svg", &svg],
            );
            assert_eq!(o.status.code(), Some(0));
        }
        let read = |name: &str| fs::read(dir.path().join(run).join(name)).unwrap();
        outputs.push((read("shape.csv"), read("shape.json"), read("shape.csv.svg")));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn default_output_goes_to_the_out_dir_variable() {
    let dir = tempfile::tempdir().unwrap();
    let o = tactr(dir.path(), &["solve", "--preset", "ctr_theta_45", "--accept-placeholders", "--format", "svg"]);
    assert_eq!(o.status.code(), Some(0));
    let svg = fs::read_to_string(dir.path().join("default_out/ctr_theta_45.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("<circle").count(), 3);
}

#[test]
fn export_reproduces_the_direct_csv() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["direct.csv", "doc.json"] {
        let o = tactr(dir.path(), &["solve", "--preset", "ctr_theta_135", "--accept-placeholders", "--out", out]);
        assert_eq!(o.status.code(), Some(0));
    }
    let o = tactr(dir.path(), &["export", "doc.json", "--out", "converted.csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        fs::read(dir.path().join("direct.csv")).unwrap(),
        fs::read(dir.path().join("converted.csv")).unwrap()
    );
    let o = tactr(dir.path(), &["export", "direct.csv", "--format", "svg"]);
    assert_eq!(o.status.code(), Some(1));
}

fn summary(dir: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(dir.join("summary.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn axial_tension_sweep_compresses_by_the_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("axial.toml"), AXIAL).unwrap();
    let o = tactr(
        dir.path(),
        &["sweep", "axial.toml", "--tendon", "0", "--from", "0", "--to", "2", "--points", "5", "--out-dir", "sw"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = summary(&dir.path().join("sw"));
    assert_eq!(rows.len(), 5);
    let ea = 200e9 * std::f64::consts::PI / 4.0 * (1e-6 - 0.36e-6);
    let drop = 0.5 * 0.1 / ea;
    let z: Vec<f64> = rows.iter().map(|r| r[5].parse().unwrap()).collect();
    for w in z.windows(2) {
        assert!(((w[0] - w[1]) - drop).abs() < 1e-6 * drop, "{z:?}");
    }
    for r in &rows {
        assert_eq!(r[2], "true");
        assert!(r[3].parse::<f64>().unwrap().abs() < 1e-15);
        assert!(r[4].parse::<f64>().unwrap().abs() < 1e-15);
    }
    for i in 0..5 {
        assert!(dir.path().join(format!("sw/point_{i:03}.csv")).exists());
    }
}

#[test]
fn single_point_sweep_matches_solve() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["--preset", "three_tube_a", "--accept-placeholders"];
    let mut args = vec!["solve"];
    args.extend(base);
    args.extend(["--out", "solo.csv"]);
    assert_eq!(tactr(dir.path(), &args).status.code(), Some(0));
    let mut args = vec!["sweep"];
    args.extend(base);
    args.extend(["--tendon", "1", "--from", "2", "--to", "2", "--points", "1", "--out-dir", "sw"]);
    let o = tactr(dir.path(), &args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        fs::read(dir.path().join("solo.csv")).unwrap(),
        fs::read(dir.path().join("sw/point_000.csv")).unwrap()
    );
}

#[test]
fn base_twist_sweep_fans_the_ctr_tip() {
    let dir = tempfile::tempdir().unwrap();
    let o = tactr(
        dir.path(),
        &[
            "sweep",
            "--preset",
            "ctr_theta_0",
            "--accept-placeholders",
            "--twist-tube",
            "1",
            "--from",
            "0",
            "--to",
            "180",
            "--points",
            "5",
            "--svg",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("default_out/ctr_theta_0_sweep");
    let rows = summary(&out);
    let angles: Vec<f64> = rows
        .iter()
        .map(|r| {
            let (x, y): (f64, f64) = (r[3].parse().unwrap(), r[4].parse().unwrap());
            y.atan2(x).abs()
        })
        .collect();
    for w in angles.windows(2) {
        assert!(w[1] > w[0], "{angles:?}");
    }
    for i in 0..5 {
        assert!(out.join(format!("point_{i:03}.csv")).exists());
        assert!(out.join(format!("point_{i:03}.svg")).exists());
    }
}

#[test]
fn sweep_rejects_reversed_ranges() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("axial.toml"), AXIAL).unwrap();
    let o = tactr(dir.path(), &["sweep", "axial.toml", "--tendon", "0", "--from", "2", "--to", "1"]);
    assert_eq!(o.status.code(), Some(1));
    let o = tactr(dir.path(), &["sweep", "axial.toml", "--tendon", "3", "--from", "0", "--to", "1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn preset_list_names_every_bundled_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let o = tactr(dir.path(), &["preset", "list"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), tactr_core::scenario::presets::PRESET_NAMES.len());
    let o = tactr(dir.path(), &["preset", "show", "ctr_theta_90"]);
    assert!(stdout(&o).contains("name = \"ctr_theta_90\""));
}

#[test]
fn validate_detects_a_stiffness_fault() {
    let dir = tempfile::tempdir().unwrap();
    let o = tactr(dir.path(), &["validate", "--stiffness-scale", "1.01", "--report", "v.json"]);
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
    assert!(stdout(&o).contains("FAIL"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("v.json")).unwrap()).unwrap();
    for c in report["checks"].as_array().unwrap() {
        assert!(c["tolerance"].is_number());
        assert!(c["measured"].is_number());
        assert!(c["name"].is_string());
    }
}

#[test]
fn validate_passes_on_a_pristine_build() {
    let dir = tempfile::tempdir().unwrap();
    let o = tactr(dir.path(), &["validate"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
    assert!(dir.path().join("default_out/validation.json").exists());
}
