use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use censored_demand::learners::read_json;
use censored_demand::pipeline::EnsembleArtifact;
use tempfile::TempDir;

const SMALL: &str = r#"
seed = 3
alpha_grid = [0.2, 0.5, 0.8, 1.0]

[data.dgp]
n = 500
n_skus = 40
n_stores = 5

[learners.penalty]
n_lambda = 8
folds = 3

[learners.forest]
ntree = 8

[evaluation]
replications = 50
effect_replications = 50
coefficient_replications = 30
oracle_draws = 10
"#;

fn cdemand(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdemand"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn setup(extra: &str) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("config.toml");
    fs::write(&config, format!("{extra}\n{SMALL}")).unwrap();
    (dir, config)
}

fn model_files(run: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(run.join("models"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
}

#[test]
fn fit_writes_eight_models_and_two_ensembles() {
    let (dir, config) = setup("");
    let out = cdemand(dir.path(), &["--config", config.to_str().unwrap(), "--out", "run", "fit"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let names = model_files(&dir.path().join("run"));
    assert_eq!(names.len(), 10, "{names:?}");
    assert_eq!(names.iter().filter(|n| n.starts_with("ensemble_")).count(), 2);
    for f in ["config.toml", "manifest.json", "data/dataset.csv", "data/truth.json"] {
        assert!(dir.path().join("run").join(f).exists(), "{f}");
    }

    let report = cdemand(dir.path(), &["--out", "run", "report"]);
    assert!(report.status.success(), "{}", String::from_utf8_lossy(&report.stderr));
    let text = String::from_utf8(report.stdout).unwrap();
    for model in ["Linear regression", "Ridge", "Lasso", "Random Forest", "Ensemble"] {
        assert!(text.lines().any(|l| l.starts_with(model)), "{model} missing:\n{text}");
    }
    assert!(dir.path().join("run/report.json").exists());
    assert_eq!(fs::read_to_string(dir.path().join("run/report.txt")).unwrap(), text);
}

#[test]
fn single_family_gives_unit_weight_ensembles() {
    let (dir, config) = setup("families = [\"ols\"]");
    let out = cdemand(dir.path(), &["--config", config.to_str().unwrap(), "--out", "run", "fit"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    assert_eq!(model_files(&run).len(), 4);
    for kind in ["censored", "uncensored"] {
        let e: EnsembleArtifact = read_json(&run.join(format!("models/ensemble_{kind}.json"))).unwrap();
        assert_eq!(e.weights, vec![1.0]);
    }
}

#[test]
fn disabled_ensemble_omits_its_row() {
    let (dir, config) = setup("ensemble = false\nfamilies = [\"ols\", \"ridge\"]");
    let c = config.to_str().unwrap();
    assert!(cdemand(dir.path(), &["--config", c, "--out", "run", "fit"]).status.success());
    let run = dir.path().join("run");
    assert!(!model_files(&run).iter().any(|n| n.starts_with("ensemble_")));
    let report = cdemand(dir.path(), &["--out", "run", "report"]);
    assert!(report.status.success(), "{}", String::from_utf8_lossy(&report.stderr));
    let text = String::from_utf8(report.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("Ridge")));
    assert!(!text.lines().any(|l| l.starts_with("Ensemble")));
}

#[test]
fn corrupted_model_is_named_in_the_error() {
    let (dir, config) = setup("families = [\"ols\"]");
    let c = config.to_str().unwrap();
    assert!(cdemand(dir.path(), &["--config", c, "--out", "run", "fit"]).status.success());
    fs::write(dir.path().join("run/models/censored_ols.json"), "{ not json").unwrap();
    let out = cdemand(dir.path(), &["--out", "run", "report"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("censored_ols.json"), "{err}");
}

#[test]
fn missing_run_directory_fails() {
    let dir = TempDir::new().unwrap();
    let out = cdemand(dir.path(), &["--out", "nowhere", "report"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));
}

#[test]
fn generate_is_byte_identical_per_seed() {
    let (dir, config) = setup("");
    let c = config.to_str().unwrap();
    for out in ["a", "b"] {
        assert!(cdemand(dir.path(), &["--config", c, "--out", out, "generate"]).status.success());
    }
    let c2 = cdemand(dir.path(), &["--config", c, "--seed", "4", "--out", "c", "generate"]);
    assert!(c2.status.success());
    let read = |d: &str| fs::read(dir.path().join(d).join("data/dataset.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
    let header = String::from_utf8(read("a")).unwrap();
    assert!(header.lines().next().unwrap().contains("sales"));
}

#[test]
fn validation_errors_exit_with_one_and_write_nothing() {
    let (dir, config) = setup("");
    let text = fs::read_to_string(&config).unwrap().replace("n = 500", "n = 0");
    fs::write(&config, text).unwrap();
    let out = cdemand(dir.path(), &["--config", config.to_str().unwrap(), "--out", "run", "generate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("run").exists());

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "no_such_key = 1\n").unwrap();
    let out = cdemand(dir.path(), &["--config", bad.to_str().unwrap(), "fit"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(cdemand(dir.path(), &["--threads", "0", "fit"]).status.code(), Some(1));
    assert_eq!(cdemand(dir.path(), &["frobnicate"]).status.code(), Some(1));
}
