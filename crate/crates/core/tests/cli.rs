use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fedprio::config::ExperimentConfig;
use serde_json::Value;

const SMALL: &str = r#"
seed = 4

[dataset]
source = "synthetic"
class_count = 4
feature_dim = 6
client_count = 12
samples_per_client = [12, 30]
labels_per_client = [1, 2]
test_fraction = 0.25
seed = 4

[model]
hidden = [8]
learning_rate = 0.05
local_epochs = 1
batch_size = 5

[federation]
client_fraction = 0.25
max_rounds = 6
"#;

fn fedprio(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedprio"))
        .args(args)
        .env("FEDPRIO_THREADS", "2")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("experiment.toml");
    fs::write(&path, text).unwrap();
    path
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn run_into(cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = fedprio(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    o
}

#[test]
fn fedavg_baseline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("base");
    run_into(&cfg, &out, &["--study", "fedavg-baseline", "--seed", "1"]);
    let rounds = fs::read_to_string(out.join("rounds.csv")).unwrap();
    assert!(rounds.starts_with("round,ordering,attempts,global_accuracy,p10,p90,fallback,degenerate\n"));
    assert_eq!(rounds.lines().take_while(|l| !l.is_empty()).count(), 7);
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rounds"], 6);
    assert!(out.join("clients.csv").exists());
}

#[test]
fn manifest_records_effective_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("mca");
    run_into(
        &cfg,
        &out,
        &[
            "--study",
            "mca-fixed",
            "--ordering",
            "ds,ld,md",
            "--rounds",
            "4",
            "--seed",
            "9",
        ],
    );
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["ordering"], serde_json::json!(["ds", "ld", "md"]));
    assert_eq!(manifest["study"], "mca-fixed");
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["tool"], "fedprio");
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));

    let echoed: ExperimentConfig = serde_json::from_value(manifest["config"].clone()).unwrap();
    let mut want = ExperimentConfig::from_toml(SMALL).unwrap();
    want.study = "mca-fixed".parse().unwrap();
    want.seed = 9;
    want.federation.max_rounds = 4;
    want.output.dir = out.clone();
    assert_eq!(echoed, want);
    assert_eq!(manifest["config_hash"], want.hash());
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn sweep_writes_one_directory_per_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("sweep");
    let o = run_into(&cfg, &out, &["--study", "mca-fixed", "--sweep", "--rounds", "2"]);
    assert_eq!(stdout(&o).lines().count(), 6);
    let mut names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        ["ds-ld-md", "ds-md-ld", "ld-ds-md", "ld-md-ds", "md-ds-ld", "md-ld-ds"]
    );
    for n in names {
        assert!(out.join(n).join("rounds.csv").exists());
    }
}

#[test]
fn equal_seeds_give_byte_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_into(&cfg, &a, &[]);
    let o = Command::new(env!("CARGO_BIN_EXE_fedprio"))
        .args(["--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap()])
        .env("FEDPRIO_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success());
    for f in ["rounds.csv", "clients.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn validate_only_lists_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SMALL.replace("client_fraction = 0.25", "client_fraction = 0.0")
        + "\n[criteria]\nids = [\"ds\", \"ld\", \"md\"]\nordering = [\"ds\", \"xx\", \"md\"]\n";
    let cfg = write_config(dir.path(), &bad);
    let o = fedprio(&["--config", cfg.to_str().unwrap(), "--validate-only"]);
    assert!(!o.status.success());
    let text = stdout(&o);
    assert!(text.contains("federation.client_fraction"), "{text}");
    assert!(text.contains("criteria.ordering"), "{text}");
    assert!(text.lines().count() >= 2);
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn validate_only_accepts_defaults() {
    let o = fedprio(&["--validate-only"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "ok");
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &SMALL.replace("max_rounds = 6", "max_rounds = 6\nmax_round = 7"),
    );
    let o = fedprio(&["--config", cfg.to_str().unwrap(), "--validate-only"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("max_round"));
}

#[test]
fn bad_thread_count_fails_cleanly() {
    let o = Command::new(env!("CARGO_BIN_EXE_fedprio"))
        .arg("--validate-only")
        .env("FEDPRIO_THREADS", "many")
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("FEDPRIO_THREADS"));
}

#[test]
fn table_mode_writes_study_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("table");
    let o = run_into(&cfg, &out, &["--table", "--seeds", "1,2", "--rounds", "3"]);
    assert!(stdout(&o).contains("final-adjusted mean over orderings"));
    let csv = fs::read_to_string(out.join("table.csv")).unwrap();
    // 15 studies, two targets each
    assert_eq!(csv.lines().count(), 1 + 15 * 2);
    assert!(out.join("table.json").exists());
}
