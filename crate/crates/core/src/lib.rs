//! Deterministic federated-learning simulator with device-aware client
//! weighting.
//!
//! Each round the server trains a sampled cohort locally, scores every
//! client on a set of criteria (dataset size, label diversity, divergence
//! from the broadcast model), turns the scores into aggregation weights
//! with a prioritized operator, and can search over criterion priority
//! orderings to keep the global accuracy from dropping. FedAvg is
//! available as a baseline.
//!
//! - [`model`]: flat-parameter MLP, SGD and accuracy
//! - [`data`]: LEAF ingestion and a non-IID synthetic generator
//! - [`criteria`]: per-round criteria matrix
//! - [`aggregation`]: prioritized scores, weights, model averaging
//! - [`orchestrator`]: rounds, ordering search, experiment logs
//! - [`metrics`]: global accuracy, percentiles, rounds-to-target, CSV
//! - [`config`], [`cli`], [`report`]: config files, run artifacts, study tables

pub mod aggregation;
pub mod cli;
pub mod config;
pub mod criteria;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod orchestrator;
pub mod report;
pub mod seed;

pub use aggregation::{
    aggregate_models, fedavg_weights, prioritized_score, prioritized_weights, scores_to_weights, AggregatorKind,
    ClientWeights, PriorityOrdering,
};
pub use config::{ExperimentConfig, Overrides, Study};
pub use criteria::{build_criteria_matrix, CriteriaMatrix, CriteriaSet, Criterion, MeasureContext};
pub use data::{ClientDataset, FederatedDataset, Sample, SynthConfig};
pub use error::{Error, Result};
pub use metrics::{percentile_accuracy, rounds_to_target, weighted_global_accuracy, AccuracySnapshot, RoundsToTarget};
pub use model::{
    init_model, local_test_accuracy, local_update, model_l2_distance, ModelSpec, ParameterVector, TrainingConfig,
};
pub use orchestrator::{
    run_experiment, sample_cohort, Experiment, ExperimentLog, FederationConfig, RoundRecord, RoundState,
};
