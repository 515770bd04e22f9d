use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn cartan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cartan")).args(args).output().expect("binary runs")
}

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.toml"))
        .to_string_lossy()
        .into_owned()
}

fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn passing_scenario_exits_zero() {
    let o = cartan(&["run", &scenario("sphere2")]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.contains("PASS"));
    assert!(text.contains("classify"));
}

#[test]
fn failing_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        &dir,
        "bad.toml",
        "schema = 1\nname = \"bad\"\n[model]\ncatalog = \"counterexample_s1\"\n[[checks]]\nop = \"invariant_metric\"\n",
    );
    let o = cartan(&["run", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn parse_and_usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "broken.toml", "schema = 1\nname = \"x\"\n[model]\ncatalog = 3\n");
    let o = cartan(&["run", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 4"), "{err}");

    let p = write(
        &dir,
        "unknown.toml",
        "schema = 1\nname = \"x\"\n[model]\ncatalog = \"moebius_band\"\n",
    );
    let o = cartan(&["run", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("moebius_band"));

    assert_eq!(cartan(&["run", &scenario("sphere2"), "--format", "yaml"]).status.code(), Some(2));
    assert_eq!(cartan(&["run", &scenario("sphere2"), "--tol-scale", "-1"]).status.code(), Some(2));
    assert_eq!(cartan(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn json_reports_are_reproducible() {
    let a = cartan(&["run", &scenario("counterexample_s1"), "--format", "json"]);
    let b = cartan(&["run", &scenario("counterexample_s1"), "--format", "json"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let c = cartan(&["run", &scenario("counterexample_s1"), "--format", "json", "--seed", "7"]);
    let v: Value = serde_json::from_slice(&c.stdout).unwrap();
    assert_eq!(v["seed"], 7);
}

#[test]
fn counterexample_report_records_the_monodromy() {
    let o = cartan(&["run", &scenario("counterexample_s1"), "--format", "json"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["schema"], 1);
    let checks = v["checks"].as_array().unwrap();
    let mono = checks.iter().find(|c| c["name"] == "monodromy").unwrap();
    let eig = mono["monodromy"]["eigenvalues"][0].as_f64().unwrap();
    let want = (2.0 * std::f64::consts::PI).exp();
    assert!((eig - want).abs() / want <= 1e-6, "{eig}");
    let geo = checks.iter().find(|c| c["op"] == "completeness").unwrap();
    let t = geo["witnesses"][0]["value"].as_f64().unwrap();
    assert!((t + 1.0).abs() <= 1e-3, "{t}");
}

#[test]
fn export_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let saved = dir.path().join("report.json");
    let run = cartan(&[
        "run",
        &scenario("flat_torus"),
        "--format",
        "json",
        "--output",
        saved.to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(0));
    assert_eq!(std::fs::read(&saved).unwrap(), run.stdout);
    let again = cartan(&["export", saved.to_str().unwrap(), "--format", "json"]);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(again.stdout, run.stdout);
    let text = cartan(&["export", saved.to_str().unwrap()]);
    assert!(stdout(&text).contains("residual"));

    let junk = write(&dir, "junk.json", "{\"schema\": 1, \"checks\": 4}");
    assert_eq!(cartan(&["export", junk.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn list_examples_names_the_catalog() {
    let o = cartan(&["list-examples"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for name in [
        "counterexample_s1",
        "flat_torus",
        "sphere2",
        "hyperbolic2",
        "affine_line_group",
        "heisenberg",
    ] {
        assert!(text.contains(name), "{name}");
    }
    let ex = cartan(&["example", "sphere2"]);
    assert!(stdout(&ex).contains("catalog = \"sphere2\""));
    assert_eq!(cartan(&["example", "nope"]).status.code(), Some(2));
}

#[test]
fn empty_scenario_passes() {
    let o = cartan(&["run", &scenario("empty"), "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["verdict"], "pass");
    assert!(v["checks"].as_array().unwrap().is_empty());
}

#[test]
fn every_bundled_scenario_passes() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            let o = cartan(&["run", p.to_str().unwrap()]);
            assert_eq!(o.status.code(), Some(0), "{}:\n{}", p.display(), stdout(&o));
            n += 1;
        }
    }
    assert!(n >= 8);
}
