use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use coalition_cli::report::REPORT_KEYS;
use serde_json::{json, Value};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_coalition");

fn ishigami_config() -> Value {
    let u = json!({"dist": "uniform", "a": -std::f64::consts::PI, "b": std::f64::consts::PI});
    json!({
        "model": {"name": "ishigami", "a": 7.0, "b": 0.1},
        "inputs": {"type": "independent", "marginals": [u, u, u]},
        "qoi": {"qoi": "variance", "n_outer": 200, "n_inner": 20, "seed": 42},
        "emit_shapley": true
    })
}

fn write_config(dir: &Path, name: &str, config: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    path
}

fn coalition(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("COALITION_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn error_json(out: &Output) -> Value {
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    serde_json::from_str(stderr.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {stderr}"))
}

#[test]
fn run_writes_report_and_csvs() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "ishigami_variance.json", &ishigami_config());
    let out = coalition(&["run", config.to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("sum identity: ok"));

    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("ishigami_variance.report.json")).unwrap()).unwrap();
    let keys: Vec<&str> = report.as_object().unwrap().keys().map(String::as_str).collect();
    let mut expected = REPORT_KEYS.to_vec();
    expected.sort_unstable();
    assert_eq!(keys, expected);
    assert_eq!(report["phi"].as_array().unwrap().len(), 8);
    assert_eq!(report["phi"][5]["subset"], json!([1, 3]));
    assert_eq!(report["psi"][0]["value"], json!(0.0));
    assert_eq!(report["diagnostics"]["sum_identity_holds"], json!(true));
    assert_eq!(report["meta"]["config"]["model"]["name"], json!("ishigami"));
    assert_eq!(report["attribution"]["values"].as_array().unwrap().len(), 3);

    let csv = fs::read_to_string(dir.path().join("ishigami_variance.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "subset,size,phi,phi_se,psi,psi_se,ratio");
    assert_eq!(lines.len(), 1 + 8);
    assert!(lines[6].starts_with("\"1,3\",2,"), "{}", lines[6]);

    let shapley = fs::read_to_string(dir.path().join("ishigami_variance.shapley.csv")).unwrap();
    assert_eq!(shapley.lines().count(), 1 + 3);
}

#[test]
fn reruns_and_thread_counts_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let mut config = ishigami_config();
    config["qoi"] = json!({"qoi": "mmd", "n_outer": 60, "n_inner": 20, "n_ref": 40, "seed": 3});
    let path = write_config(dir.path(), "exp.json", &config);
    let mut reports = Vec::new();
    for (threads, out_dir) in [("1", "a"), ("1", "b"), ("4", "c")] {
        let out_dir = dir.path().join(out_dir);
        let out = coalition(
            &[
                "--quiet",
                "--threads",
                threads,
                "run",
                path.to_str().unwrap(),
                "--output-dir",
                out_dir.to_str().unwrap(),
            ],
            &[],
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(out.stdout.is_empty());
        reports.push((
            fs::read(out_dir.join("exp.report.json")).unwrap(),
            fs::read(out_dir.join("exp.csv")).unwrap(),
        ));
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0], reports[2]);

    let env_dir = dir.path().join("env");
    let out = coalition(
        &[
            "--quiet",
            "run",
            path.to_str().unwrap(),
            "--output-dir",
            env_dir.to_str().unwrap(),
        ],
        &[("COALITION_THREADS", "3")],
    );
    assert!(out.status.success());
    assert_eq!(fs::read(env_dir.join("exp.report.json")).unwrap(), reports[0].0);
}

#[test]
fn config_output_dir_is_relative_to_the_config() {
    let dir = TempDir::new().unwrap();
    let mut config = ishigami_config();
    config["output_dir"] = json!("results");
    config["emit_csv"] = json!(false);
    let path = write_config(dir.path(), "exp.json", &config);
    assert!(coalition(&["--quiet", "run", path.to_str().unwrap()], &[])
        .status
        .success());
    assert!(dir.path().join("results/exp.report.json").exists());
    assert!(!dir.path().join("results/exp.csv").exists());
}

#[test]
fn validate_accepts_valid_configs() {
    let dir = TempDir::new().unwrap();
    let path = write_config(dir.path(), "ok.json", &ishigami_config());
    let out = coalition(&["validate", path.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
    assert!(!dir.path().join("ok.report.json").exists());
}

#[test]
fn config_errors_exit_2() {
    let dir = TempDir::new().unwrap();

    let mut wide = ishigami_config();
    wide["model"] = json!({"name": "linear", "beta": vec![1.0; 25]});
    wide["inputs"] =
        json!({"type": "independent", "marginals": vec![json!({"dist": "normal", "mean": 0.0, "sd": 1.0}); 25]});
    let path = write_config(dir.path(), "wide.json", &wide);
    for verb in ["run", "validate"] {
        let out = coalition(&[verb, path.to_str().unwrap()], &[]);
        assert_eq!(out.status.code(), Some(2));
        let err = error_json(&out);
        assert_eq!(err["error"]["kind"], json!("dimension_cap"));
        assert!(err["error"]["message"].as_str().unwrap().contains("24"));
    }

    let mut cov = ishigami_config();
    cov["qoi"] = json!({"qoi": "covariance", "p": 0, "q": 1, "n_outer": 10, "n_inner": 10, "seed": 1});
    let out = coalition(
        &["validate", write_config(dir.path(), "cov.json", &cov).to_str().unwrap()],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["error"]["category"], json!("config"));
    assert_eq!(err["error"]["kind"], json!("incompatible_qoi"));

    let mut unknown = ishigami_config();
    unknown["model"] = json!({"name": "borehole"});
    let out = coalition(
        &[
            "validate",
            write_config(dir.path(), "unknown.json", &unknown).to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    let message = error_json(&out)["error"]["message"].as_str().unwrap().to_string();
    for name in coalition_core::models::REGISTERED_MODELS {
        assert!(message.contains(name), "{message}");
    }

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(
        coalition(&["validate", bad.to_str().unwrap()], &[]).status.code(),
        Some(2)
    );
    let missing = dir.path().join("missing.json");
    assert_eq!(
        coalition(&["run", missing.to_str().unwrap()], &[]).status.code(),
        Some(2)
    );
}

#[test]
fn estimation_errors_exit_3() {
    // Constant outputs leave the median-heuristic bandwidth undefined.
    let dir = TempDir::new().unwrap();
    let mut config = ishigami_config();
    config["model"] = json!({"name": "constant", "dim": 3, "value": 1.0});
    config["qoi"] = json!({"qoi": "mmd", "n_outer": 10, "n_inner": 10, "n_ref": 10, "seed": 1});
    let path = write_config(dir.path(), "constant.json", &config);
    let out = coalition(&["run", path.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"]["category"], json!("estimation"));

    let mut overflow = ishigami_config();
    overflow["model"] = json!({"name": "linear", "beta": [1e308, 1e308, 1e308]});
    overflow["inputs"] =
        json!({"type": "independent", "marginals": vec![json!({"dist": "normal", "mean": 0.0, "sd": 1.0}); 3]});
    let path = write_config(dir.path(), "overflow.json", &overflow);
    let out = coalition(&["run", path.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(error_json(&out)["error"]["subset"].is_string());
}

#[test]
fn matrix_qoi_csv_has_entry_columns() {
    let dir = TempDir::new().unwrap();
    let n = json!({"dist": "normal", "mean": 0.0, "sd": 1.0});
    let config = json!({
        "model": {"name": "sum_difference"},
        "inputs": {"type": "independent", "marginals": [n, n]},
        "qoi": {"qoi": "covariance_matrix", "n_outer": 50, "n_inner": 10, "seed": 1}
    });
    let path = write_config(dir.path(), "m.json", &config);
    assert!(coalition(&["--quiet", "run", path.to_str().unwrap()], &[])
        .status
        .success());
    let csv = fs::read_to_string(dir.path().join("m.csv")).unwrap();
    assert!(csv.starts_with("subset,size,phi_1_1,phi_1_2,phi_2_2,phi_se_1_1"));
    assert_eq!(csv.lines().count(), 5);
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("m.report.json")).unwrap()).unwrap();
    assert!(report.get("attribution").is_none());
    assert_eq!(report["ratios"], Value::Null);
    assert_eq!(report["diagnostics"]["dk_membership"]["member"], json!(true));
    assert_eq!(report["psi"][0]["value"], json!([[0.0, 0.0], [0.0, 0.0]]));
}

/// Replaces every leaf with its JSON type; arrays keep only their first element.
fn skeleton(v: &Value) -> Value {
    match v {
        Value::Null => json!("null"),
        Value::Bool(_) => json!("bool"),
        Value::Number(_) => json!("number"),
        Value::String(_) => json!("string"),
        Value::Array(items) => json!(items.first().map(skeleton).into_iter().collect::<Vec<_>>()),
        Value::Object(map) => Value::Object(map.iter().map(|(k, v)| (k.clone(), skeleton(v))).collect()),
    }
}

// Set COALITION_UPDATE_GOLDEN=1 to regenerate after an intentional schema change.
#[test]
fn report_schema_matches_golden() {
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/report_schema.json");
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "schema.json", &ishigami_config());
    assert!(coalition(&["--quiet", "run", config.to_str().unwrap()], &[])
        .status
        .success());
    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("schema.report.json")).unwrap()).unwrap();
    let actual = serde_json::to_string_pretty(&skeleton(&report)).unwrap() + "\n";
    if std::env::var_os("COALITION_UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(golden_path.parent().unwrap()).unwrap();
        fs::write(&golden_path, &actual).unwrap();
    }
    assert_eq!(actual, fs::read_to_string(&golden_path).unwrap());
}
