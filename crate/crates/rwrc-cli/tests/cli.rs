use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn rwrc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rwrc")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, doc: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(doc).unwrap()).unwrap();
    path
}

fn run_config(dir: &Path, name: &str, doc: &Value) -> Output {
    let path = write_config(dir, name, doc);
    rwrc(&["run", "--config", path.to_str().unwrap()])
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|_| panic!("stderr: {}", String::from_utf8_lossy(&out.stderr)))
}

#[test]
fn chi_d_at_p_two_matches_the_eigen_record() {
    let dir = tempfile::tempdir().unwrap();
    let cube = json!({"d": 1, "alpha": 1.0, "G": [[-8.5, 8.5]]});
    let chi = run_config(dir.path(), "chi.cfg.json", &json!({
        "experiment": "chi-d", "output": dir.path().join("chi.json"), "params": {"box": cube, "p": 2.0}}));
    assert!(chi.status.success(), "{}", String::from_utf8_lossy(&chi.stderr));
    let eig = run_config(dir.path(), "eig.cfg.json", &json!({
        "experiment": "eigen", "output": dir.path().join("eig.json"), "params": {"uniform": {"box": cube}}}));
    assert!(eig.status.success(), "{}", String::from_utf8_lossy(&eig.stderr));
    let a = read_json(&dir.path().join("chi.json"))["result"]["value"].as_f64().unwrap();
    let b = read_json(&dir.path().join("eig.json"))["result"]["value"].as_f64().unwrap();
    let oracle = 2.0 * (1.0 - (std::f64::consts::PI / 18.0).cos());
    assert!((a - b).abs() <= 1e-6 * b, "{a} vs {b}");
    assert!((b - oracle).abs() <= 1e-10);
    assert!(dir.path().join("chi.minimizer.csv").is_file());
}

#[test]
fn malformed_config_exits_with_two_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config(dir.path(), "bad.json", &json!({
        "experiment": "nonexit", "seed": 1, "output": dir.path().join("x.json"),
        "params": {"model": {"model": "tail", "eta": 1.0, "D": 1.0}, "box": {"d": 1, "alpha": 4.0, "G": [[-1.0, 1.0]]},
                   "t": 1.0, "n_env": "many", "n_walks": 10}}));
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "config");
    assert_eq!(err["error"]["path"], "params.n_env");
    assert!(!dir.path().join("x.json").exists());

    let out = rwrc(&["run", "--config", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(dir.path().join("trunc.json"), "{\"experiment\": ").unwrap();
    let out = rwrc(&["run", "--config", dir.path().join("trunc.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "config");
}

#[test]
fn invalid_values_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config(dir.path(), "neg.json", &json!({
        "experiment": "lifshitz", "seed": 1, "output": dir.path().join("l.json"),
        "params": {"model": {"eta": -1.0, "D": 1.0}, "box": {"d": 1, "alpha": 1.0, "G": [[-0.5, 0.5]]},
                   "eps": [0.5], "n_env": 10}}));
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["path"], "params.eta");
}

#[test]
fn stochastic_subcommands_require_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("s.json");
    let out = rwrc(&["sample", "--eta", "1", "--D", "1", "--G", "-1,1", "--alpha", "3", "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["path"], "seed");
    let out = rwrc(&["sample", "--eta", "1", "--D", "1", "--G", "-1,1", "--alpha", "3", "--seed", "4", "--out", out_path.to_str().unwrap()]);
    assert!(out.status.success());
    let doc = read_json(&out_path);
    assert_eq!(doc["seed"], 4);
    assert_eq!(doc["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(doc["versions"]["rwrc"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn sampled_fields_feed_the_eigen_command() {
    let dir = tempfile::tempdir().unwrap();
    let field = dir.path().join("field.json");
    let out = rwrc(&["sample", "--model", "elliptic", "--lambda", "0.5", "--values", "0.5,1.5", "--d", "2", "--alpha", "5",
        "--G", "0,1;0,1", "--seed", "9", "--out", field.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let eig = dir.path().join("eig.json");
    let out = rwrc(&["eigen", "--field", field.to_str().unwrap(), "--count", "3", "--out", eig.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let values = read_json(&eig)["result"]["eigenvalues"].clone();
    let values: Vec<f64> = serde_json::from_value(values).unwrap();
    assert_eq!(values.len(), 3);
    assert!(values.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn compare_slopes_reads_a_table_file() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("t.csv");
    let mut text = String::from("x,estimate,lo,hi\n");
    for x in [1.0f64, 2.0, 3.0, 5.0] {
        let e = (0.3 - 0.8 * x).exp();
        text.push_str(&format!("{x},{e},{},{}\n", e * 0.9, e / 0.9));
    }
    std::fs::write(&table, text).unwrap();
    let out_path = dir.path().join("fit.json");
    let out = rwrc(&["compare-slopes", "--table", table.to_str().unwrap(), "--predicted-slope", "-0.8", "--out", out_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ratio = read_json(&out_path)["result"]["ratio"].as_f64().unwrap();
    assert!((ratio - 1.0).abs() < 1e-10);

    std::fs::write(&table, "x,estimate,lo,hi\n1,0.5,0.4,0.6\n1,0.4,0.3,0.5\n1,0.3,0.2,0.4\n").unwrap();
    let out = rwrc(&["compare-slopes", "--table", table.to_str().unwrap(), "--predicted-slope", "-0.8", "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["path"], "params.table_file");
}

#[test]
fn thread_count_does_not_change_the_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for threads in ["1", "3"] {
        let out_path = dir.path().join(format!("h{threads}.json"));
        let out = rwrc(&["--threads", threads, "homog", "--lambda", "0.5", "--values", "0.5,1.5", "--d", "1",
            "--sizes", "16,32", "--jmax", "2", "--n-env", "6", "--seed", "3", "--out", out_path.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let json = std::fs::read_to_string(&out_path).unwrap();
        let csv = std::fs::read_to_string(dir.path().join(format!("h{threads}.eigenvalues.csv"))).unwrap();
        files.push((json.replace(&format!("h{threads}."), "h."), csv));
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn usage_errors_are_reported_as_json() {
    let out = rwrc(&["regime", "--eta", "x", "--d", "1", "--out", "unused.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "usage");
}

#[test]
fn shipped_schema_lists_every_experiment() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/config.schema.json");
    let schema = read_json(&path);
    let names = schema["properties"]["experiment"]["enum"].as_array().unwrap();
    assert_eq!(names.len(), 11);
    for name in names {
        let kind: rwrc_cli::config::ExperimentKind = serde_json::from_value(name.clone()).unwrap();
        assert_eq!(kind.name(), name.as_str().unwrap());
    }
}
