//! Experiment configuration files.
//!
//! A config is a TOML document; every section is optional and falls back
//! to the defaults below. Unknown keys are rejected. Command-line
//! overrides are applied on top of the file.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregation::{AggregatorKind, PriorityOrdering};
use crate::criteria::{CriteriaSet, BUILTIN_IDS};
use crate::data::{load_leaf_json, synth_noniid, FederatedDataset, LeafOptions, SynthConfig};
use crate::error::{Error, Result};
use crate::model::{Activation, ModelSpec, TrainingConfig};
use crate::orchestrator::FederationConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    /// One criterion on its own.
    Individual,
    /// Prioritized operator with a fixed ordering.
    McaFixed,
    /// Prioritized operator with per-round ordering search.
    FinalAdjusted,
    FedavgBaseline,
}

impl Study {
    pub const ALL: [Study; 4] = [
        Study::FedavgBaseline,
        Study::Individual,
        Study::McaFixed,
        Study::FinalAdjusted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Study::Individual => "individual",
            Study::McaFixed => "mca-fixed",
            Study::FinalAdjusted => "final-adjusted",
            Study::FedavgBaseline => "fedavg-baseline",
        }
    }

    pub fn aggregator(self) -> AggregatorKind {
        match self {
            Study::FedavgBaseline => AggregatorKind::Fedavg,
            _ => AggregatorKind::Prioritized,
        }
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Study::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::config(format!("unknown study {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DatasetConfig {
    Synthetic(SynthConfig),
    Leaf {
        train: PathBuf,
        #[serde(default)]
        test: Option<PathBuf>,
        #[serde(flatten)]
        options: LeafOptions,
    },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic(SynthConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let t = TrainingConfig::default();
        ModelConfig {
            hidden: vec![32],
            activation: Activation::Relu,
            learning_rate: t.learning_rate,
            local_epochs: t.local_epochs,
            batch_size: t.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationSection {
    pub client_fraction: f64,
    pub max_rounds: usize,
    pub target_accuracies: Vec<f64>,
    pub device_percentages: Vec<f64>,
    /// Must agree with the study when given.
    pub aggregator: Option<AggregatorKind>,
    pub eval_subsample: Option<usize>,
}

impl Default for FederationSection {
    fn default() -> Self {
        let f = FederationConfig::default();
        FederationSection {
            client_fraction: f.client_fraction,
            max_rounds: 200,
            target_accuracies: f.target_accuracies,
            device_percentages: f.device_percentages,
            aggregator: None,
            eval_subsample: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriteriaSection {
    /// Registered criteria; column order of the criteria matrix.
    pub ids: Vec<String>,
    /// Initial priority ordering, most important first. For the
    /// `individual` study this names the single criterion to use.
    pub ordering: Vec<String>,
}

impl Default for CriteriaSection {
    fn default() -> Self {
        let ids: Vec<String> = BUILTIN_IDS.iter().map(|s| s.to_string()).collect();
        CriteriaSection {
            ordering: ids.clone(),
            ids,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Run every ordering of the criteria, one sub-directory each.
    pub sweep: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("runs/default"),
            sweep: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_study")]
    pub study: Study,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub federation: FederationSection,
    #[serde(default)]
    pub criteria: CriteriaSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_study() -> Study {
    Study::FinalAdjusted
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            study: default_study(),
            seed: 0,
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            federation: FederationSection::default(),
            criteria: CriteriaSection::default(),
            output: OutputSection::default(),
        }
    }
}

/// Values given on the command line; `None` keeps the file's value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub study: Option<Study>,
    pub ordering: Option<Vec<String>>,
    pub aggregator: Option<AggregatorKind>,
    pub rounds: Option<usize>,
    pub out: Option<PathBuf>,
    pub sweep: Option<bool>,
}

/// One problem found by [`ExperimentConfig::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::File {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(study) = o.study {
            self.study = study;
        }
        if let Some(ordering) = &o.ordering {
            self.criteria.ordering = ordering.clone();
        }
        if let Some(aggregator) = o.aggregator {
            self.federation.aggregator = Some(aggregator);
        }
        if let Some(rounds) = o.rounds {
            self.federation.max_rounds = rounds;
        }
        if let Some(out) = &o.out {
            self.output.dir = out.clone();
        }
        if let Some(sweep) = o.sweep {
            self.output.sweep = sweep;
        }
    }

    /// Criteria registered for this study: the single ordering entry for
    /// `individual`, `criteria.ids` otherwise.
    pub fn criteria_ids(&self) -> Vec<String> {
        match self.study {
            Study::Individual => self.criteria.ordering.clone(),
            _ => self.criteria.ids.clone(),
        }
    }

    /// Every violation in the config; empty when it is runnable.
    pub fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let mut push = |field: &str, message: String| {
            v.push(Violation {
                field: field.to_owned(),
                message,
            })
        };

        match &self.dataset {
            DatasetConfig::Synthetic(s) => {
                if let Err(e) = s.validate() {
                    push("dataset", e.to_string());
                }
            }
            DatasetConfig::Leaf { train, test, options } => {
                if !train.exists() {
                    push("dataset.train", format!("{} does not exist", train.display()));
                }
                if let Some(t) = test {
                    if !t.exists() {
                        push("dataset.test", format!("{} does not exist", t.display()));
                    }
                } else if !(options.test_fraction > 0.0 && options.test_fraction < 1.0) {
                    push(
                        "dataset.test_fraction",
                        format!("must lie in (0, 1), got {}", options.test_fraction),
                    );
                }
                if options.class_count.is_some_and(|k| k < 2) {
                    push("dataset.class_count", "must be at least 2".into());
                }
            }
        }

        if self.model.hidden.contains(&0) {
            push("model.hidden", "layer widths must be positive".into());
        }
        if !(self.model.learning_rate > 0.0 && self.model.learning_rate.is_finite()) {
            push(
                "model.learning_rate",
                format!("must be positive, got {}", self.model.learning_rate),
            );
        }
        if self.model.local_epochs == 0 {
            push("model.local_epochs", "must be at least 1".into());
        }
        if self.model.batch_size == 0 {
            push("model.batch_size", "must be at least 1".into());
        }

        let f = &self.federation;
        if !(f.client_fraction > 0.0 && f.client_fraction <= 1.0) {
            push(
                "federation.client_fraction",
                format!("must lie in (0, 1], got {}", f.client_fraction),
            );
        }
        if f.max_rounds == 0 {
            push("federation.max_rounds", "must be at least 1".into());
        }
        for t in &f.target_accuracies {
            if !(0.0..=1.0).contains(t) {
                push("federation.target_accuracies", format!("{t} outside [0, 1]"));
            }
        }
        for p in &f.device_percentages {
            if !(*p > 0.0 && *p <= 100.0) {
                push("federation.device_percentages", format!("{p} outside (0, 100]"));
            }
        }
        if f.eval_subsample == Some(0) {
            push("federation.eval_subsample", "must be positive".into());
        }
        if let Some(a) = f.aggregator {
            if a != self.study.aggregator() {
                push(
                    "federation.aggregator",
                    format!(
                        "{a} conflicts with study {} which uses {}",
                        self.study,
                        self.study.aggregator()
                    ),
                );
            }
        }

        let c = &self.criteria;
        for id in c.ids.iter().chain(&c.ordering) {
            if !BUILTIN_IDS.contains(&id.as_str()) {
                push("criteria", format!("unknown criterion {id:?}"));
            }
        }
        if self.study == Study::Individual {
            if c.ordering.len() != 1 {
                push(
                    "criteria.ordering",
                    format!(
                        "the individual study takes exactly one criterion, got {}",
                        c.ordering.len()
                    ),
                );
            }
        } else if self.study != Study::FedavgBaseline || !c.ordering.is_empty() {
            if let Ok(set) = CriteriaSet::from_ids(&c.ids) {
                if let Err(e) = PriorityOrdering::from_ids(&c.ordering, &set) {
                    push("criteria.ordering", e.to_string());
                }
            } else if !c.ids.is_empty() {
                push("criteria.ids", "criteria must be distinct".into());
            } else {
                push("criteria.ids", "at least one criterion is required".into());
            }
        }
        if self.output.sweep && !matches!(self.study, Study::McaFixed | Study::FinalAdjusted) {
            push(
                "output.sweep",
                format!("sweeping orderings is meaningless for study {}", self.study),
            );
        }
        v
    }

    fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::config(
                v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "),
            ))
        }
    }

    pub fn load_dataset(&self) -> Result<FederatedDataset> {
        match &self.dataset {
            DatasetConfig::Synthetic(s) => synth_noniid(s),
            DatasetConfig::Leaf { train, test, options } => load_leaf_json(train, test.as_deref(), options),
        }
    }

    pub fn model_spec(&self, dataset: &FederatedDataset) -> ModelSpec {
        ModelSpec::mlp(
            dataset.feature_dim(),
            self.model.hidden.clone(),
            dataset.class_count(),
            self.model.activation,
        )
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            learning_rate: self.model.learning_rate,
            local_epochs: self.model.local_epochs,
            batch_size: self.model.batch_size,
            rng_seed: self.seed,
        }
    }

    pub fn criteria_set(&self) -> Result<CriteriaSet> {
        CriteriaSet::from_ids(&self.criteria_ids())
    }

    /// Everything the orchestrator needs, after validation.
    pub fn resolve(&self) -> Result<(CriteriaSet, FederationConfig)> {
        self.ensure_valid()?;
        let criteria = self.criteria_set()?;
        let initial_ordering = match self.study {
            Study::Individual => PriorityOrdering::identity(1),
            Study::FedavgBaseline if self.criteria.ordering.is_empty() => PriorityOrdering::identity(criteria.len()),
            _ => PriorityOrdering::from_ids(&self.criteria.ordering, &criteria)?,
        };
        let f = &self.federation;
        let federation = FederationConfig {
            client_fraction: f.client_fraction,
            max_rounds: f.max_rounds,
            target_accuracies: f.target_accuracies.clone(),
            device_percentages: f.device_percentages.clone(),
            aggregator: self.study.aggregator(),
            initial_ordering,
            adjustment_enabled: self.study == Study::FinalAdjusted,
            seed: self.seed,
            eval_subsample: f.eval_subsample,
        };
        Ok((criteria, federation))
    }

    /// SHA-256 of the canonical JSON form of the config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
