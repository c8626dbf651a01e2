use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use inverseflow::cinn::CinnModel;
use inverseflow::harness::{blade_smoke_config, read_csv_meta, read_json, ValidationReport};
use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_inverseflow"));
    c.env("INVERSEFLOW_THREADS", "1");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn write_cfg(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    let o = run(&["toy", "--bogus"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["no-such-command"])), 1);
    assert_eq!(code(&run(&["toy", "--seed", "minus-one"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
    // A config that is not valid for the subcommand is a usage error too.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "bad.json", &json!({"unknown_field": 1}));
    assert_eq!(code(&run(&["train-forward", "--config", s(&cfg)])), 1);
    assert_eq!(code(&run(&["train-forward", "--config", s(&dir.path().join("missing.json"))])), 1);
}

/// doe → train-forward → train-inverse → validate / invert on a tiny
/// version of the 85-input problem.
#[test]
fn pipeline_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let blade = serde_json::to_value(blade_smoke_config()).unwrap();
    let doe_cfg = write_cfg(
        d,
        "doe.json",
        &json!({"output_dir": d.join("doe"), "seed": 1, "design": {"problem": "blade_like", "params": blade}}),
    );
    let o = run(&["doe", "--config", s(&doe_cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let meta = read_csv_meta(&d.join("doe/doe.csv")).unwrap();
    assert_eq!(meta.seed, 1);
    assert_eq!(meta.schema_version, inverseflow::SCHEMA_VERSION);
    assert_eq!(meta.config_hash.len(), 64);

    let fwd_cfg = write_cfg(
        d,
        "forward.json",
        &json!({
            "dataset": d.join("doe/doe.csv"),
            "codec": d.join("doe/pca_codec.json"),
            "mcmc": {"n_steps": 60, "n_burn": 40, "n_keep": 2, "seed": 0},
            "beta_median": 1.0 / 85.0,
            "predict_mode": "map",
            "output_dir": d.join("fwd"),
        }),
    );
    let o = run(&["train-forward", "--config", s(&fwd_cfg), "--seed", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let forward = d.join("fwd/forward_model.json");

    // Zero epochs leaves the flow at its initialization: a pure permutation
    // of Gaussian noise, which cannot reproduce the targets.
    let inv_cfg = write_cfg(
        d,
        "inverse.json",
        &json!({
            "forward": forward,
            "n_pairs": 200,
            "cinn": {"n_blocks": 2, "hidden": [16], "cond_hidden": [16], "d_c": 4, "epochs": 0, "batch_size": 50, "eval_rows": 64},
            "output_dir": d.join("inv"),
        }),
    );
    let o = run(&["train-inverse", "--config", s(&inv_cfg), "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let model_path = d.join("inv/cinn_model.json");

    let val_cfg = write_cfg(
        d,
        "validate.json",
        &json!({"model": model_path, "forward": forward, "n_targets": 6, "samples": 10, "output_dir": d.join("val")}),
    );
    let o = run(&["validate", "--config", s(&val_cfg)]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let report: ValidationReport = read_json(&d.join("val/validation_report.json")).unwrap().data;
    assert!(!report.passed);
    assert!(report.inverse.iter().any(|r| r.r2 < report.r2_threshold));

    let model: CinnModel = read_json(&model_path).unwrap().data;
    let target = vec!["0.5"; model.obs_dim()].join(",");
    let o = run(&["invert", "--model", s(&model_path), "--target", &target, "--samples", "0", "--out", s(&d.join("inv0"))]);
    assert_eq!(code(&o), 1);
    assert!(!d.join("inv0").exists());

    let o = run(&[
        "invert", "--model", s(&model_path), "--forward", s(&forward), "--target", &target, "--samples", "7", "--seed", "4",
        "--out", s(&d.join("cands")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(d.join("cands/candidates_0.csv")).unwrap();
    assert!(text.starts_with("# {"));
    // meta line + header + one row per sample
    assert_eq!(text.lines().count(), 2 + 7);

    // Wrong target length is a shape problem, not a numeric one.
    let o = run(&["invert", "--model", s(&model_path), "--target", "0.1,0.2", "--out", s(&d.join("bad"))]);
    assert_eq!(code(&o), 1);
}
