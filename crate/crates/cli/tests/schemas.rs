mod common;

use std::fs;
use std::path::PathBuf;

use common::{fixture, rnnctl, stderr_json, stdout_json};
use jsonschema::JSONSchema;
use serde_json::Value;

fn schema(name: &str) -> JSONSchema {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("schemas").join(name);
    let value: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    JSONSchema::compile(&value).expect("schema compiles")
}

fn assert_valid(schema_name: &str, instance: &Value) {
    let compiled = schema(schema_name);
    let msgs: Vec<String> = match compiled.validate(instance) {
        Ok(()) => return,
        Err(errors) => errors.map(|e| format!("{} at {}", e, e.instance_path)).collect(),
    };
    panic!("{schema_name}: {msgs:?}");
}

#[test]
fn activation_report_validates() {
    for name in ["tanh", "softsign"] {
        assert_valid("activation-report.schema.json", &stdout_json(&rnnctl(&["activation", "check", "--name", name])));
    }
}

#[test]
fn b_class_reports_validate() {
    for f in ["b11.json", "b12.json"] {
        assert_valid("b-class.schema.json", &stdout_json(&rnnctl(&["check-b", "--system", &fixture(f)])));
    }
}

#[test]
fn verdicts_validate() {
    for f in ["b11.json", "b12.json"] {
        let v = stdout_json(&rnnctl(&["verdict", "--system", &fixture(f), "--samples", "200"]));
        assert_valid("verdict.schema.json", &v);
    }
}

#[test]
fn steering_reports_validate() {
    let cases: [&[&str]; 3] = [
        &["--form", "f1t", "--a", "1", "--b", "2", "--start", "1,1", "--T", "1"],
        &["--form", "f1", "--a", "2", "--b", "1", "--start", "0.1,0.1", "--T", "1", "--max-hold", "1"],
        &["--form", "f2", "--a", "-1", "--b", "-0.5", "--start", "2,1", "--T", "2", "--h", "0.01"],
    ];
    let mut validated = 0;
    for args in cases {
        let out = rnnctl(&[&["steer2d"], args].concat());
        if out.status.success() {
            assert_valid("steer2d-report.schema.json", &stdout_json(&out));
            validated += 1;
        } else {
            assert_valid("error.schema.json", &stderr_json(&out));
        }
    }
    assert!(validated >= 2);
}

#[test]
fn mollify_report_validates() {
    let v = stdout_json(&rnnctl(&[
        "mollify-demo",
        "--system",
        &fixture("b12.json"),
        "--control",
        &fixture("three_switch.json"),
        "--l",
        "10,20",
        "--radii",
        "0.01",
        "--targets",
        "4",
    ]));
    assert_valid("mollify-report.schema.json", &v);
}

#[test]
fn reach_grid_validates() {
    for f in ["b11.json", "b12.json"] {
        let v = stdout_json(&rnnctl(&["reach", "--system", &fixture(f), "--x0", "0.3,0.2", "--cell", "0.2"]));
        assert_valid("reach-grid.schema.json", &v);
    }
}

#[test]
fn errors_validate() {
    let cases: [&[&str]; 3] = [
        &["check-b", "--system", "ragged.json"],
        &["activation", "check", "--name", "relu"],
        &["steer2d", "--form", "f1", "--a", "2", "--b", "1", "--start", "1,1"],
    ];
    for args in cases {
        let owned: Vec<String> =
            args.iter().map(|a| if a.ends_with(".json") { fixture(a) } else { a.to_string() }).collect();
        let refs: Vec<&str> = owned.iter().map(String::as_str).collect();
        let out = rnnctl(&refs);
        assert_eq!(out.status.code(), Some(1));
        assert_valid("error.schema.json", &stderr_json(&out));
    }
}
