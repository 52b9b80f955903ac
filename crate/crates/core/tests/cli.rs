use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BASE: &str = r#"
[grid]
dims = [10, 10, 1]
spacing = [0.2, 0.2, 0.1]

[scenarios]
kind = "vortex"
diffusivity = 1e-4
strength_scale = 0.02
cdf_points = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0]
distribution = { kind = "gaussian", mu = 0.5, sigma = 0.05 }

[operator]
dt = 1.0

[tracking]
steps = 20
eps_acc = 0.005

[placement]
sensors = 4

[validate]
tolerance = 5e-2
steps = 20
step_ratio = 0.2
"#;

struct Run {
    dir: tempfile::TempDir,
    config: PathBuf,
}

impl Run {
    fn new(text: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("run.toml");
        std::fs::write(&config, text).unwrap();
        Self { dir, config }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn cli(&self, cmd: &str, extra: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_pfsensor"))
            .arg(cmd)
            .arg("--config")
            .arg(&self.config)
            .args(extra)
            .output()
            .unwrap()
    }

    fn plan(&self) -> Value {
        read_json(&self.out().join("plan.json"))
    }
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn sensor_states(plan: &Value) -> Vec<u64> {
    plan["sensors"].as_array().unwrap().iter().map(|s| s["state"].as_u64().unwrap()).collect()
}

#[test]
fn build_writes_one_matrix_per_cdf_point() {
    let run = Run::new(BASE);
    let o = run.cli("build", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest = read_json(&run.out().join("manifest.json"));
    let entries = manifest["scenarios"].as_array().unwrap();
    assert_eq!(entries.len(), 7);
    let total: f64 = entries.iter().map(|e| e["weight"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    for e in entries {
        assert!(run.out().join(e["path"].as_str().unwrap()).exists());
    }
}

#[test]
fn single_scenario_has_unit_weight() {
    let run = Run::new(&BASE.replace("cdf_points = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0]", "cdf_points = [0.5]"));
    assert_eq!(code(&run.cli("build", &[])), 0);
    let manifest = read_json(&run.out().join("manifest.json"));
    assert_eq!(manifest["scenarios"][0]["weight"].as_f64(), Some(1.0));
}

#[test]
fn missing_field_file_exits_2_with_path() {
    let text = r#"
[scenarios]
kind = "fields"
diffusivity = 0.0
files = [{ path = "nowhere/field.txt", xi = 0.0, weight = 1.0 }]
[operator]
dt = 1.0
[tracking]
steps = 1
eps_acc = 0.1
[placement]
sensors = 1
"#;
    let run = Run::new(text);
    let o = run.cli("build", &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nowhere/field.txt"), "{}", stderr(&o));
}

#[test]
fn unstable_dt_reports_bound() {
    let run = Run::new(BASE);
    let o = run.cli("build", &["--dt", "1000"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("max"), "{}", stderr(&o));
}

#[test]
fn place_respects_count_and_constraints() {
    let run = Run::new(BASE);
    assert_eq!(code(&run.cli("build", &[])), 0);
    let o = run.cli("place", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let plan = run.plan();
    let states = sensor_states(&plan);
    assert!(states.len() <= 4);
    let mut uniq = states.clone();
    uniq.sort_unstable();
    uniq.dedup();
    assert_eq!(uniq.len(), states.len());
    assert!(plan.get("occupied_space_coverage").is_none());
    assert!(run.out().join("expected_coverage.txt").exists());

    // Forbid the left half, where states have x index < 5.
    let constrained = Run::new(&format!(
        "{BASE}\n[constraints]\nforbidden = [{{ lo = [0.0, 0.0, 0.0], hi = [1.0, 2.0, 0.1] }}]\n"
    ));
    assert_eq!(code(&constrained.cli("build", &[])), 0);
    assert_eq!(code(&constrained.cli("place", &[])), 0);
    let plan = constrained.plan();
    assert!(!sensor_states(&plan).is_empty());
    for s in plan["sensors"].as_array().unwrap() {
        assert!(s["ijk"][0].as_u64().unwrap() >= 5, "sensor in forbidden box: {s}");
    }
}

#[test]
fn sensing_mask_adds_occupied_space_coverage() {
    let run = Run::new(&format!(
        "{BASE}\n[constraints]\nforbidden = [{{ lo = [0.0, 0.0, 0.0], hi = [0.5, 2.0, 0.1] }}]\noccupied = [{{ lo = [0.5, 0.5, 0.0], hi = [1.5, 1.5, 0.1] }}]\n"
    ));
    assert_eq!(code(&run.cli("build", &[])), 0);
    assert_eq!(code(&run.cli("place", &["--removal", "literal", "--sensors", "2"])), 0);
    let plan = run.plan();
    let occ = plan["occupied_space_coverage"].as_array().unwrap();
    let cum = plan["cumulative_expected_coverage"].as_array().unwrap();
    assert_eq!(occ.len(), cum.len());
    assert_eq!(plan["settings"]["removal"], "literal");
    assert!(sensor_states(&plan).len() <= 2);
}

#[test]
fn all_columns_forbidden_is_diagnosed() {
    let run = Run::new(&format!(
        "{BASE}\n[constraints]\nforbidden = [{{ lo = [0.0, 0.0, 0.0], hi = [2.0, 2.0, 0.1] }}]\n"
    ));
    assert_eq!(code(&run.cli("build", &[])), 0);
    let o = run.cli("place", &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("forbid"), "{}", stderr(&o));
}

#[test]
fn validate_exit_codes() {
    let identity = Run::new(&BASE.replace("strength_scale = 0.02", "strength_scale = 0.0").replace("diffusivity = 1e-4", "diffusivity = 0.0"));
    let o = identity.cli("validate", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = read_json(&identity.out().join("validation.json"));
    for row in report["rows"].as_array().unwrap() {
        assert_eq!(row["l2_error"].as_f64(), Some(0.0));
    }

    let run = Run::new(BASE);
    assert_eq!(code(&run.cli("validate", &[])), 0);
    let strict = Run::new(&BASE.replace("tolerance = 5e-2", "tolerance = 1e-9"));
    assert_eq!(code(&strict.cli("validate", &[])), 3);

    assert_eq!(code(&run.cli("build", &[])), 0);
    let manifest = run.out().join("manifest.json");
    assert_eq!(code(&run.cli("validate", &["--manifest", manifest.to_str().unwrap()])), 0);
    let victim = run.out().join("markov_003.txt");
    let text = std::fs::read_to_string(&victim).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let last = lines.len() - 1;
    let mut fields: Vec<String> = lines[last].split_whitespace().map(String::from).collect();
    fields[2] = "0.5".into();
    lines[last] = fields.join(" ");
    std::fs::write(&victim, lines.join("\n") + "\n").unwrap();
    let o = run.cli("validate", &["--manifest", manifest.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("markov_003.txt"), "{}", stderr(&o));
}

#[test]
fn converge_table_layout() {
    let run = Run::new(BASE);
    let o = run.cli("converge", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 5);
    assert!(rows[4].trim_end().ends_with('-'));
    assert!(rows[..4].iter().all(|r| !r.trim_end().ends_with('-')));
    assert_eq!(code(&run.cli("converge", &["--samples", "3"])), 2);
}

#[test]
fn propagate_writes_field() {
    let run = Run::new(BASE);
    let o = run.cli("propagate", &["--scenario", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(run.out().join("propagate.txt").exists());
    assert_eq!(code(&run.cli("propagate", &["--release", "100000"])), 2);
}

#[test]
fn bad_flags_exit_2() {
    let run = Run::new(BASE);
    assert_eq!(code(&run.cli("place", &["--removal", "sideways"])), 2);
    assert_eq!(code(&run.cli("place", &["--sensors", "0"])), 2);
    let broken = Run::new("[grid\n");
    assert_eq!(code(&broken.cli("build", &[])), 2);
}
