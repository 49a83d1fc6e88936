//! End-to-end tests driving the installed binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nrs"))
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("nrs_cli_{tag}_{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

fn base_config(out_dir: &Path, seeds: &str, strategies: &str, grid: &str) -> String {
    format!(
        r#"{{
  "dataset": {{ "kind": "two_moons", "n": 80, "noise_sd": 0.2, "seed": 3 }},
  "model": {{ "layer_widths": [2, 8, 2], "activation": "relu" }},
  "train": {{ "epochs": 2, "base_lr": 0.1, "batch_size": 20, "num_workers": 2 }},{grid}
  "analysis": {{ "hessian": true, "scope": "last_layer", "tol": 1e-6 }},
  "output_dir": "{}",
  "seeds": {seeds},
  "strategies": {strategies}
}}"#,
        out_dir.display()
    )
}

fn run_ok(config_path: &Path) -> Output {
    let out = bin().arg("run").arg(config_path).output().unwrap();
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn summary_rows(out_dir: &Path) -> Vec<String> {
    let text = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    text.lines().skip(1).map(|s| s.to_string()).collect()
}

#[test]
fn single_baseline_seed_writes_one_row() {
    let dir = tmp_dir("single");
    let cfg = dir.join("exp.json");
    write(&cfg, &base_config(&dir.join("out"), "[0]", "[\"baseline\"]", ""));
    run_ok(&cfg);
    let rows = summary_rows(&dir.join("out"));
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("baseline,0,0,0,"));
}

#[test]
fn grid_expansion_produces_fifteen_rows() {
    // 3 seeds x (baseline 1 + rpr 2 eps + nrs 2 eps x 1 alpha) = 15
    let dir = tmp_dir("grid");
    let cfg = dir.join("exp.json");
    write(
        &cfg,
        &base_config(
            &dir.join("out"),
            "[0, 1, 2]",
            "[\"baseline\", \"rpr\", \"nrs\"]",
            "\n  \"grid\": { \"epsilon\": [0.1, 0.5] },",
        ),
    );
    run_ok(&cfg);
    let rows = summary_rows(&dir.join("out"));
    assert_eq!(rows.len(), 15);
    let count = |p: &str| rows.iter().filter(|r| r.starts_with(p)).count();
    assert_eq!(count("baseline,"), 3);
    assert_eq!(count("rpr,"), 6);
    assert_eq!(count("nrs,"), 6);
}

#[test]
fn unknown_config_key_is_named_and_fails() {
    let dir = tmp_dir("badkey");
    let cfg = dir.join("exp.json");
    let mut text = base_config(&dir.join("out"), "[0]", "[\"baseline\"]", "");
    text = text.replacen("\"seeds\"", "\"sneeds\"", 1);
    write(&cfg, &text);
    let out = bin().arg("run").arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("sneeds"), "stderr: {stderr}");
}

#[test]
fn report_embeds_config_that_reproduces_metrics_bit_identically() {
    let dir = tmp_dir("rerun");
    let cfg = dir.join("exp.json");
    write(
        &cfg,
        &base_config(
            &dir.join("out"),
            "[5]",
            "[\"nrs\"]",
            "\n  \"grid\": { \"epsilon\": [0.1], \"alpha\": [2.0] },",
        ),
    );
    run_ok(&cfg);
    let report_path = dir.join("out/nrs_eps0.1_alpha2_seed5/report.json");
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();

    // re-run from the embedded config into a fresh directory
    let mut embedded = doc["config"].clone();
    let out2 = dir.join("out2");
    embedded["output_dir"] = serde_json::Value::String(out2.display().to_string());
    let cfg2 = dir.join("rerun.json");
    write(&cfg2, &serde_json::to_string_pretty(&embedded).unwrap());
    run_ok(&cfg2);

    let doc2: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(out2.join("nrs_eps0.1_alpha2_seed5/report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(doc["report"], doc2["report"]);
}

#[test]
fn env_var_overrides_output_dir() {
    let dir = tmp_dir("envvar");
    let cfg = dir.join("exp.json");
    write(&cfg, &base_config(&dir.join("ignored"), "[0]", "[\"baseline\"]", ""));
    let forced = dir.join("forced");
    let out = bin()
        .arg("run")
        .arg(&cfg)
        .env("NRS_OUTPUT_DIR", &forced)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(forced.join("summary.csv").exists());
    assert!(!dir.join("ignored").exists());
}

#[test]
fn analyze_is_deterministic_and_handles_zero_params() {
    let dir = tmp_dir("analyze");
    let cfg = dir.join("exp.json");
    write(&cfg, &base_config(&dir.join("out"), "[0]", "[\"baseline\"]", ""));
    run_ok(&cfg);
    let ckpt = dir.join("out/baseline_eps0_alpha0_seed0/model.ckpt");
    let data = dir.join("moons.json");
    write(&data, r#"{ "kind": "two_moons", "n": 80, "noise_sd": 0.2, "seed": 3 }"#);

    let analyze = |ckpt: &Path| {
        let out = bin()
            .arg("analyze")
            .arg(ckpt)
            .arg("--data")
            .arg(&data)
            .arg("--scope")
            .arg("last-layer")
            .arg("--tol")
            .arg("1e-6")
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    let first = analyze(&ckpt);
    let second = analyze(&ckpt);
    assert_eq!(first, second);
    assert!(first.contains("lambda_max="));

    // all-zero linear model still yields a valid PSD block
    let spec = nrs_core::network::MlpSpec::new(vec![2, 2], nrs_core::network::Activation::Relu)
        .unwrap();
    let zeros = nrs_core::network::ParameterVector::zeros(spec.num_params());
    let zero_ckpt = dir.join("zero.ckpt");
    nrs_core::network::save_checkpoint(&zero_ckpt, &spec, &zeros).unwrap();
    let text = analyze(&zero_ckpt);
    let lambda: f64 = text
        .split("lambda_max=")
        .nth(1)
        .unwrap()
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!(lambda >= 0.0, "lambda {lambda}");

    // two rows were appended to the analysis csv next to the trained ckpt
    let csv = fs::read_to_string(dir.join("out/baseline_eps0_alpha0_seed0/analysis.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3); // header + 2 runs
}

#[test]
fn shape_mismatched_checkpoint_is_a_usage_error() {
    let dir = tmp_dir("mismatch");
    let spec = nrs_core::network::MlpSpec::new(vec![5, 3], nrs_core::network::Activation::Relu)
        .unwrap();
    let params = nrs_core::network::ParameterVector::zeros(spec.num_params());
    let ckpt = dir.join("wide.ckpt");
    nrs_core::network::save_checkpoint(&ckpt, &spec, &params).unwrap();
    let data = dir.join("moons.json");
    write(&data, r#"{ "kind": "two_moons", "n": 40, "noise_sd": 0.1 }"#);
    let out = bin()
        .arg("analyze")
        .arg(&ckpt)
        .arg("--data")
        .arg(&data)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(1));
}
