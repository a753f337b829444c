use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn lsrann() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lsrann"));
    c.env_remove("LSRANN_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    lsrann().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

const TINY: &str = r#"
case = "ex3.case1"
seed = 3

[sampling]
n_interior = 800
n_boundary = 200

[tube]
n_candidates = 4000

[network]
m1 = 80
growth_enabled = false

[zeroset]
seed_grid = [30, 30]
slice_times = [0.0, 2.0]

[oracle]
foot_points = 201
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn catalog_lists_table_parameters() {
    let o = run(&["catalog"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for id in ["ex1.case1", "ex1.case2", "ex1.case3", "ex1.case4", "ex3b.case4", "ex4"] {
        assert!(text.contains(id), "{id} missing");
    }
    let o = run(&["catalog", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let find = |id: &str| v.as_array().unwrap().iter().find(|c| c["id"] == id).unwrap().clone();
    assert_eq!(find("ex4")["n_candidates_label"], "20^5");
    assert_eq!(find("ex4")["n_candidates"], 3_200_000);
    assert_eq!(find("ex3b.case4")["variance"], serde_json::json!([3.0, 3.0, 3.0]));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "case = \"ex1.case1\"\nbogus = 1\n");
    let o = run(&["solve", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));

    let o = run(&["solve", "--case", "ex9.case1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ex1.case1"));

    let o = run(&["solve", "--case", "ex3b.case1", "--output", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("eps0"));

    let o = lsrann().env("LSRANN_THREADS", "zero").args(["catalog"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solve_is_deterministic_and_comparable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = lsrann()
            .env("LSRANN_THREADS", "1")
            .args(["solve", "--config", cfg.to_str().unwrap(), "--output", out.to_str().unwrap(), "--compare"])
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let ca = std::fs::read(a.join("cloud.csv")).unwrap();
    assert!(!ca.is_empty());
    assert_eq!(ca, std::fs::read(b.join("cloud.csv")).unwrap());

    let m = json(&a.join("manifest.json"));
    assert_eq!(m["status"], "ok");
    assert_eq!(m["stages"].as_array().unwrap().len(), 2);
    assert_eq!(m["config"]["seed"], 3);
    assert!(m["chamfer"]["overall"]["mean"].as_f64().unwrap().is_finite());
    assert!(a.join("solution.json").exists());

    // Compare against the oracle named by the manifest, and against itself.
    let cloud = a.join("cloud.csv");
    let o = run(&["compare", cloud.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["slices"].as_array().unwrap().len(), 2);
    let o = run(&["compare", cloud.to_str().unwrap(), "--reference", cloud.to_str().unwrap()]);
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["overall"]["mean"], 0.0);
    assert_eq!(r["overall"]["max"], 0.0);

    // Re-extraction from the saved solution reproduces the cloud.
    let again = dir.path().join("again.csv");
    let o = run(&["zeroset", a.to_str().unwrap(), "--output", again.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(ca, std::fs::read(&again).unwrap());
}

#[test]
fn growth_switch_and_oracle_schema() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY.replace("growth_enabled = false", "growth = [{ width = 20, range = [2.0, 2.0, 2.0] }]\n[pool]\nseed_grid = [10, 10, 10]");
    let cfg = write_config(dir.path(), &text);
    let grown = dir.path().join("grown");
    let o = run(&["solve", "--config", cfg.to_str().unwrap(), "--output", grown.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(json(&grown.join("manifest.json"))["stages"].as_array().unwrap().len(), 3);
    let base = dir.path().join("base");
    let o = run(&["solve", "--config", cfg.to_str().unwrap(), "--growth", "off", "--output", base.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = json(&base.join("manifest.json"));
    assert_eq!(m["stages"].as_array().unwrap().len(), 2);
    assert_eq!(m["config"]["network"]["growth_enabled"], false);

    // Oracle of a different case has a different schema.
    let ref_csv = dir.path().join("oracle.csv");
    let o = run(&["oracle", "--case", "ex1.case1", "--times", "0.5", "--output", ref_csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&["compare", base.join("cloud.csv").to_str().unwrap(), "--reference", ref_csv.to_str().unwrap()]);
    assert!(!o.status.success());
    let msg = stderr(&o);
    assert!(msg.contains("t,x,p") && msg.contains("t,x,z"), "{msg}");
}

#[test]
fn numerical_failure_keeps_partial_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &TINY.replace("n_candidates = 4000", "n_candidates = 4000\neps_a = 1e-12"));
    let out = dir.path().join("out");
    let o = run(&["solve", "--config", cfg.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["status"], "failed");
    assert_eq!(m["failed_stage"], "adapted");
    assert!(!out.join("cloud.csv").exists());
}

#[test]
fn free_particle_desk_run_matches_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("ex3-case1-desk.toml");
    let out = dir.path().join("out");
    let o = run(&["solve", "--config", cfg.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = dir.path().join("report.json");
    let o = run(&["compare", out.join("cloud.csv").to_str().unwrap(), "--output", report.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mean = json(&report)["overall"]["mean"].as_f64().unwrap();
    assert!(mean <= 1e-2, "chamfer mean {mean}");
}
