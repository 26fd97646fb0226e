//! The simulated federation: cohort sampling, local training, criteria
//! measurement, candidate aggregation and the per-round search over
//! priority orderings.
//!
//! Within a round the cohort trains exactly once. Every ordering attempt
//! reuses those local models and the round's criteria matrix; only the
//! weights, the candidate model and its evaluation are recomputed. The
//! first candidate whose weighted accuracy is not below the previous
//! round's is accepted. When no ordering reaches it, the best candidate
//! (lexicographically smallest ordering on ties) is accepted and the round
//! is flagged as a fallback.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{
    aggregate_models, fedavg_weights, prioritized_weights, AggregatorKind, ClientWeights, PriorityOrdering,
};
use crate::criteria::{build_criteria_matrix, CriteriaSet, MeasureContext};
use crate::data::{ClientDataset, FederatedDataset};
use crate::error::{Error, Result};
use crate::metrics::{weighted_global_accuracy, AccuracySnapshot, ClientAccuracy};
use crate::model::{init_model, local_test_accuracy, local_update, ModelSpec, ParameterVector, TrainingConfig};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub client_fraction: f64,
    pub max_rounds: usize,
    pub target_accuracies: Vec<f64>,
    /// Device percentages (0-100] reported by rounds-to-target.
    pub device_percentages: Vec<f64>,
    pub aggregator: AggregatorKind,
    pub initial_ordering: PriorityOrdering,
    pub adjustment_enabled: bool,
    pub seed: u64,
    /// Evaluate candidates on a fixed seeded subsample of this many
    /// clients instead of on every client.
    pub eval_subsample: Option<usize>,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            client_fraction: 0.1,
            max_rounds: 1000,
            target_accuracies: vec![0.75, 0.80],
            device_percentages: vec![20.0, 30.0, 40.0, 50.0, 70.0, 75.0],
            aggregator: AggregatorKind::Prioritized,
            initial_ordering: PriorityOrdering::identity(3),
            adjustment_enabled: true,
            seed: 0,
            eval_subsample: None,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self, client_count: usize, criteria_count: usize) -> Result<()> {
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(Error::config(format!(
                "client fraction must lie in (0, 1], got {}",
                self.client_fraction
            )));
        }
        if self.max_rounds == 0 {
            return Err(Error::config("max_rounds must be at least 1"));
        }
        if client_count == 0 {
            return Err(Error::config("the federation has no clients"));
        }
        if let Some(t) = self.target_accuracies.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::config(format!("target accuracy {t} outside [0, 1]")));
        }
        if let Some(p) = self.device_percentages.iter().find(|p| !(**p > 0.0 && **p <= 100.0)) {
            return Err(Error::config(format!("device percentage {p} outside (0, 100]")));
        }
        if self.aggregator == AggregatorKind::Prioritized && self.initial_ordering.len() != criteria_count {
            return Err(Error::config(format!(
                "initial ordering covers {} criteria but {} are registered",
                self.initial_ordering.len(),
                criteria_count
            )));
        }
        if self.eval_subsample == Some(0) {
            return Err(Error::config("evaluation subsample must be positive"));
        }
        Ok(())
    }
}

/// `⌈fraction · n⌉`, clamped to `[1, n]`. A 1e-9 slack keeps products such
/// as `0.1 · 30 = 3.0000000000000004` from rounding up.
pub fn cohort_size(client_count: usize, fraction: f64) -> usize {
    ((fraction * client_count as f64 - 1e-9).ceil() as usize).clamp(1, client_count.max(1))
}

/// Indices of the round's cohort, sorted, drawn uniformly without
/// replacement from a stream keyed by `(seed, round)`.
pub fn sample_cohort(client_count: usize, fraction: f64, round: usize, seed: u64) -> Result<Vec<usize>> {
    if client_count == 0 {
        return Err(Error::config("cannot sample a cohort from zero clients"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(format!(
            "client fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let k = cohort_size(client_count, fraction);
    if k == client_count {
        return Ok((0..client_count).collect());
    }
    let mut rng = seed::rng(seed::stream_seed(seed, "cohort", round as u64));
    let mut picked = index::sample(&mut rng, client_count, k).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Server state carried between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundState {
    /// Rounds completed so far.
    pub round: usize,
    pub global: ParameterVector,
    pub accuracy: f64,
    pub ordering: PriorityOrdering,
}

/// One candidate tried in a round. `ordering` is `None` for FedAvg.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Attempt {
    pub ordering: Option<PriorityOrdering>,
    pub accuracy: f64,
    pub degenerate_weights: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub cohort: Vec<String>,
    /// Cohort members without training data; they take no part in the round.
    pub skipped: Vec<String>,
    /// Number of `local_update` calls made in this round.
    pub local_updates: usize,
    pub attempts: Vec<Attempt>,
    pub accepted: usize,
    pub accepted_ordering: Option<PriorityOrdering>,
    pub accepted_accuracy: f64,
    pub previous_accuracy: f64,
    /// No ordering reached `previous_accuracy`; the best one was kept.
    pub fallback: bool,
    /// Criteria whose raw values were all zero this round.
    pub degenerate_criteria: Vec<String>,
}

impl RoundRecord {
    pub fn backtracks(&self) -> usize {
        self.attempts.len().saturating_sub(1)
    }

    pub fn any_degenerate(&self) -> bool {
        !self.degenerate_criteria.is_empty() || self.attempts.iter().any(|a| a.degenerate_weights)
    }
}

/// Everything a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentLog {
    pub criteria: Vec<String>,
    pub aggregator: AggregatorKind,
    pub adjustment_enabled: bool,
    pub initial_ordering: PriorityOrdering,
    pub records: Vec<RoundRecord>,
    /// Per-client accuracy of the accepted model after each round.
    pub snapshots: Vec<AccuracySnapshot>,
    pub final_model: Option<ParameterVector>,
}

impl ExperimentLog {
    pub fn ordering_label(&self, ordering: Option<&PriorityOrdering>) -> String {
        match ordering {
            Some(o) => o.label(&self.criteria),
            None => self.aggregator.to_string(),
        }
    }
}

/// A configured federation over one dataset.
pub struct Experiment<'a> {
    dataset: &'a FederatedDataset,
    spec: ModelSpec,
    training: TrainingConfig,
    config: FederationConfig,
    criteria: CriteriaSet,
    eval_clients: Vec<usize>,
}

struct Candidate {
    model: ParameterVector,
    snapshot: AccuracySnapshot,
    accuracy: f64,
}

impl<'a> Experiment<'a> {
    pub fn new(
        dataset: &'a FederatedDataset,
        spec: ModelSpec,
        training: TrainingConfig,
        config: FederationConfig,
        criteria: CriteriaSet,
    ) -> Result<Self> {
        spec.validate()?;
        training.validate()?;
        config.validate(dataset.client_count(), criteria.len())?;
        if spec.input_dim != dataset.feature_dim() {
            return Err(Error::config(format!(
                "model input dimension {} does not match feature dimension {}",
                spec.input_dim,
                dataset.feature_dim()
            )));
        }
        if spec.class_count != dataset.class_count() {
            return Err(Error::config(format!(
                "model has {} classes but the dataset has {}",
                spec.class_count,
                dataset.class_count()
            )));
        }
        let n = dataset.client_count();
        let eval_clients = match config.eval_subsample {
            Some(k) if k < n => {
                let mut rng = seed::rng(seed::stream_seed(config.seed, "eval", 0));
                let mut v = index::sample(&mut rng, n, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        Ok(Experiment {
            dataset,
            spec,
            training,
            config,
            criteria,
            eval_clients,
        })
    }

    pub fn config(&self) -> &FederationConfig {
        &self.config
    }

    pub fn criteria(&self) -> &CriteriaSet {
        &self.criteria
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Round-zero state: seeded initial model, accuracy 0, initial ordering.
    pub fn initial_state(&self) -> Result<RoundState> {
        Ok(RoundState {
            round: 0,
            global: init_model(&self.spec, seed::stream_seed(self.config.seed, "init", 0))?,
            accuracy: 0.0,
            ordering: self.config.initial_ordering.clone(),
        })
    }

    /// Evaluates `model` on the evaluation clients.
    pub fn evaluate(&self, round: usize, model: &ParameterVector) -> Result<AccuracySnapshot> {
        let clients = self
            .eval_clients
            .par_iter()
            .map(|&i| {
                let c = &self.dataset.clients()[i];
                let accuracy = match local_test_accuracy(&self.spec, model, c) {
                    Ok(a) => a,
                    Err(Error::EmptyTestSet { .. }) => 0.0,
                    Err(e) => return Err(e),
                };
                Ok(ClientAccuracy {
                    client_id: c.client_id.clone(),
                    accuracy,
                    test_size: c.test.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AccuracySnapshot { round, clients })
    }

    fn candidate(&self, round: usize, locals: &[ParameterVector], weights: &ClientWeights) -> Result<Candidate> {
        let model = aggregate_models(locals, weights)?;
        let snapshot = self.evaluate(round, &model)?;
        let accuracy = weighted_global_accuracy(&snapshot)?;
        Ok(Candidate {
            model,
            snapshot,
            accuracy,
        })
    }

    /// One round of communication. Returns the next state, the round log
    /// and the accepted model's per-client accuracies. `state` is never
    /// modified.
    pub fn run_round(&self, state: &RoundState) -> Result<(RoundState, RoundRecord, AccuracySnapshot)> {
        let t = state.round + 1;
        let abort = |e: Error| match e {
            Error::RoundAbort { .. } => e,
            other => Error::RoundAbort {
                round: t,
                reason: other.to_string(),
            },
        };
        let cohort_idx = sample_cohort(
            self.dataset.client_count(),
            self.config.client_fraction,
            t,
            self.config.seed,
        )
        .map_err(abort)?;
        let cohort: Vec<&ClientDataset> = cohort_idx.iter().map(|&i| &self.dataset.clients()[i]).collect();

        let updates: Vec<Result<ParameterVector>> = cohort
            .par_iter()
            .map(|c| {
                let cfg = self
                    .training
                    .with_seed(seed::client_round_seed(self.config.seed, &c.client_id, t));
                local_update(&self.spec, &state.global, c, &cfg)
            })
            .collect();
        let local_updates = cohort.len();

        let mut trained = Vec::with_capacity(cohort.len());
        let mut locals = Vec::with_capacity(cohort.len());
        let mut skipped = Vec::new();
        for (c, r) in cohort.iter().zip(updates) {
            match r {
                Ok(w) => {
                    trained.push(*c);
                    locals.push(w);
                }
                Err(Error::EmptyTrainingSet { client }) => skipped.push(client),
                Err(e) => return Err(abort(e)),
            }
        }
        if trained.is_empty() {
            return Err(Error::RoundAbort {
                round: t,
                reason: "no cohort member could train".into(),
            });
        }
        let ids: Vec<String> = trained.iter().map(|c| c.client_id.clone()).collect();

        let mut record = RoundRecord {
            round: t,
            cohort: cohort.iter().map(|c| c.client_id.clone()).collect(),
            skipped,
            local_updates,
            attempts: Vec::new(),
            accepted: 0,
            accepted_ordering: None,
            accepted_accuracy: 0.0,
            previous_accuracy: state.accuracy,
            fallback: false,
            degenerate_criteria: Vec::new(),
        };

        if self.config.aggregator == AggregatorKind::Fedavg {
            let weights = fedavg_weights(&trained).map_err(abort)?;
            let cand = self.candidate(t, &locals, &weights).map_err(abort)?;
            record.attempts.push(Attempt {
                ordering: None,
                accuracy: cand.accuracy,
                degenerate_weights: weights.degenerate,
            });
            record.accepted_accuracy = cand.accuracy;
            let next = RoundState {
                round: t,
                global: cand.model,
                accuracy: cand.accuracy,
                ordering: state.ordering.clone(),
            };
            return Ok((next, record, cand.snapshot));
        }

        let ctx = MeasureContext {
            cohort: &trained,
            global_model: &state.global,
            local_models: &locals,
        };
        let matrix = build_criteria_matrix(t, &ids, &ctx, &self.criteria).map_err(abort)?;
        record.degenerate_criteria = matrix
            .criteria
            .iter()
            .zip(&matrix.degenerate_columns)
            .filter(|(_, &d)| d)
            .map(|(id, _)| id.clone())
            .collect();

        let try_ordering = |ordering: &PriorityOrdering, record: &mut RoundRecord| -> Result<Candidate> {
            let weights = prioritized_weights(&matrix, ordering)?;
            let cand = self.candidate(t, &locals, &weights)?;
            record.attempts.push(Attempt {
                ordering: Some(ordering.clone()),
                accuracy: cand.accuracy,
                degenerate_weights: weights.degenerate,
            });
            Ok(cand)
        };

        let first = try_ordering(&state.ordering, &mut record).map_err(abort)?;
        let (accepted, ordering) = if !self.config.adjustment_enabled || first.accuracy >= state.accuracy {
            (first, state.ordering.clone())
        } else {
            let mut best = (first, state.ordering.clone(), 0usize);
            let mut found = None;
            for ordering in PriorityOrdering::all(self.criteria.len()) {
                if ordering == state.ordering {
                    continue;
                }
                let cand = try_ordering(&ordering, &mut record).map_err(abort)?;
                let idx = record.attempts.len() - 1;
                if cand.accuracy >= state.accuracy {
                    found = Some((cand, ordering, idx));
                    break;
                }
                if cand.accuracy > best.0.accuracy || (cand.accuracy == best.0.accuracy && ordering < best.1) {
                    best = (cand, ordering, idx);
                }
            }
            let (cand, ordering, idx) = match found {
                Some(f) => f,
                None => {
                    record.fallback = true;
                    best
                }
            };
            record.accepted = idx;
            (cand, ordering)
        };
        record.accepted_ordering = Some(ordering.clone());
        record.accepted_accuracy = accepted.accuracy;
        let next = RoundState {
            round: t,
            global: accepted.model,
            accuracy: accepted.accuracy,
            ordering,
        };
        Ok((next, record, accepted.snapshot))
    }

    /// Runs `max_rounds` rounds from the initial state.
    pub fn run(&self) -> Result<ExperimentLog> {
        let mut state = self.initial_state()?;
        let mut log = ExperimentLog {
            criteria: self.criteria.ids().into_iter().map(str::to_owned).collect(),
            aggregator: self.config.aggregator,
            adjustment_enabled: self.config.adjustment_enabled && self.config.aggregator == AggregatorKind::Prioritized,
            initial_ordering: self.config.initial_ordering.clone(),
            records: Vec::with_capacity(self.config.max_rounds),
            snapshots: Vec::with_capacity(self.config.max_rounds),
            final_model: None,
        };
        for _ in 0..self.config.max_rounds {
            let (next, record, snapshot) = self.run_round(&state)?;
            log.records.push(record);
            log.snapshots.push(snapshot);
            state = next;
        }
        log.final_model = Some(state.global);
        Ok(log)
    }
}

/// Convenience wrapper around [`Experiment::new`] and [`Experiment::run`].
pub fn run_experiment(
    dataset: &FederatedDataset,
    spec: ModelSpec,
    training: TrainingConfig,
    config: FederationConfig,
    criteria: CriteriaSet,
) -> Result<ExperimentLog> {
    Experiment::new(dataset, spec, training, config, criteria)?.run()
}
