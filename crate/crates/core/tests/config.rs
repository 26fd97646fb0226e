use std::path::PathBuf;

use fedprio::config::{DatasetConfig, ExperimentConfig, Overrides, Study};
use fedprio::report::run_single;
use fedprio::AggregatorKind;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[test]
fn toml_round_trips() {
    let cfg = ExperimentConfig::default();
    let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash(), cfg.hash());
}

#[test]
fn empty_file_means_defaults() {
    assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    assert!(ExperimentConfig::default().validate().is_empty());
}

#[test]
fn overrides_win_over_file_values() {
    let mut cfg = ExperimentConfig::from_toml("seed = 3\n[federation]\nmax_rounds = 50\n").unwrap();
    cfg.apply(&Overrides {
        seed: Some(7),
        rounds: Some(9),
        ..Overrides::default()
    });
    assert_eq!((cfg.seed, cfg.federation.max_rounds), (7, 9));
    cfg.apply(&Overrides::default());
    assert_eq!((cfg.seed, cfg.federation.max_rounds), (7, 9));
}

#[test]
fn studies_map_onto_federation_settings() {
    let mut cfg = ExperimentConfig::default();
    let cases = [
        (Study::FedavgBaseline, AggregatorKind::Fedavg, false, 3),
        (Study::McaFixed, AggregatorKind::Prioritized, false, 3),
        (Study::FinalAdjusted, AggregatorKind::Prioritized, true, 3),
    ];
    for (study, aggregator, adjust, m) in cases {
        cfg.study = study;
        let (set, fed) = cfg.resolve().unwrap();
        assert_eq!(
            (fed.aggregator, fed.adjustment_enabled, set.len()),
            (aggregator, adjust, m)
        );
    }
    cfg.study = Study::Individual;
    cfg.criteria.ordering = vec!["md".into()];
    let (set, fed) = cfg.resolve().unwrap();
    assert_eq!(set.ids(), ["md"]);
    assert_eq!(fed.initial_ordering.indices(), &[0]);
    assert!(!fed.adjustment_enabled);
}

#[test]
fn conflicting_aggregator_is_a_violation() {
    let mut cfg = ExperimentConfig::default();
    cfg.federation.aggregator = Some(AggregatorKind::Fedavg);
    let v = cfg.validate();
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].field, "federation.aggregator");
}

#[test]
fn several_violations_are_reported_together() {
    let text = r#"
study = "individual"
[model]
batch_size = 0
[federation]
client_fraction = 0.0
max_rounds = 0
[criteria]
ordering = ["ld", "md"]
"#;
    let fields: Vec<String> = ExperimentConfig::from_toml(text)
        .unwrap()
        .validate()
        .into_iter()
        .map(|v| v.field)
        .collect();
    for f in [
        "model.batch_size",
        "federation.client_fraction",
        "federation.max_rounds",
        "criteria.ordering",
    ] {
        assert!(fields.iter().any(|x| x == f), "{f} missing from {fields:?}");
    }
}

#[test]
fn leaf_config_runs_end_to_end() {
    let text = format!(
        r#"
study = "final-adjusted"
[dataset]
source = "leaf"
train = "{}"
test = "{}"
[model]
hidden = [4]
learning_rate = 0.05
local_epochs = 1
batch_size = 2
[federation]
client_fraction = 0.5
max_rounds = 3
"#,
        fixture("leaf_train.json").display(),
        fixture("leaf_test.json").display()
    );
    let cfg = ExperimentConfig::from_toml(&text).unwrap();
    assert!(matches!(cfg.dataset, DatasetConfig::Leaf { .. }));
    assert!(cfg.validate().is_empty());
    let log = run_single(&cfg).unwrap();
    assert_eq!(log.records.len(), 3);
    // one of the four users only has test data and one only train data
    assert!(log.snapshots.iter().all(|s| s.clients.len() == 4));
}

#[test]
fn missing_leaf_file_is_a_violation() {
    let cfg =
        ExperimentConfig::from_toml("[dataset]\nsource = \"leaf\"\ntrain = \"/nonexistent/train.json\"\n").unwrap();
    assert!(cfg.validate().iter().any(|v| v.field == "dataset.train"));
}
