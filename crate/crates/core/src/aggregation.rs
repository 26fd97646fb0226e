//! Client weighting and model averaging.
//!
//! The prioritized operator scores a client from its criteria row taken in
//! priority order: `s = Σ λ_i c_(i)` with `λ_1 = 1` and
//! `λ_i = λ_(i-1) · c_(i-1)`, i.e. `s = c_(1) + c_(1)c_(2) + ...`. A poorly
//! satisfied high-priority criterion caps every term after it. Weights are
//! the scores divided by their cohort sum.

use std::fmt;
use std::str::FromStr;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::criteria::{eval_dataset_size, CriteriaMatrix, CriteriaSet};
use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::model::ParameterVector;

/// A permutation of criterion indices, most important first.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct PriorityOrdering(Vec<usize>);

impl PriorityOrdering {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &i in &order {
            if i >= order.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Validation(format!(
                    "{order:?} is not a permutation of 0..{}",
                    order.len()
                )));
            }
        }
        if order.is_empty() {
            return Err(Error::Validation("an ordering needs at least one criterion".into()));
        }
        Ok(PriorityOrdering(order))
    }

    /// `0, 1, ..., m-1`.
    pub fn identity(m: usize) -> Self {
        PriorityOrdering((0..m).collect())
    }

    /// Resolves criterion ids (e.g. `["md", "ds", "ld"]`) against a registry.
    pub fn from_ids<S: AsRef<str>>(ids: &[S], criteria: &CriteriaSet) -> Result<Self> {
        if ids.len() != criteria.len() {
            return Err(Error::Validation(format!(
                "ordering names {} criteria but {} are registered",
                ids.len(),
                criteria.len()
            )));
        }
        let order = ids
            .iter()
            .map(|id| {
                criteria
                    .index_of(id.as_ref())
                    .ok_or_else(|| Error::Validation(format!("ordering names unknown criterion {:?}", id.as_ref())))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(order)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    /// Ids in priority order joined by `>`, e.g. `md>ds>ld`.
    pub fn label(&self, criteria: &[String]) -> String {
        self.0.iter().map(|&i| criteria[i].as_str()).join(">")
    }

    /// All `m!` orderings in lexicographic order.
    pub fn all(m: usize) -> Vec<PriorityOrdering> {
        (0..m).permutations(m).map(PriorityOrdering).collect()
    }
}

impl TryFrom<Vec<usize>> for PriorityOrdering {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PriorityOrdering> for Vec<usize> {
    fn from(o: PriorityOrdering) -> Self {
        o.0
    }
}

/// Prioritized score of one criteria row and the per-position importance
/// weights λ.
pub fn prioritized_score(row: &[f64], ordering: &PriorityOrdering) -> Result<(f64, Vec<f64>)> {
    if row.len() != ordering.len() {
        return Err(Error::Dimension {
            expected: ordering.len(),
            found: row.len(),
        });
    }
    if let Some(c) = row.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::Validation(format!("criterion value {c} outside [0, 1]")));
    }
    let mut lambdas = Vec::with_capacity(row.len());
    let mut lambda = 1.0;
    let mut score = 0.0;
    for &i in ordering.indices() {
        lambdas.push(lambda);
        score += lambda * row[i];
        lambda *= row[i];
    }
    Ok((score, lambdas))
}

/// Weights for one cohort together with the scores they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientWeights {
    pub clients: Vec<String>,
    pub weights: Vec<f64>,
    pub scores: Vec<f64>,
    /// Per-client λ vectors; empty when the weights did not come from the
    /// prioritized operator.
    pub lambdas: Vec<Vec<f64>>,
    /// Every score was zero and the weights fell back to uniform.
    pub degenerate: bool,
}

impl ClientWeights {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// `p_k = s_k / Σ s_i`, followed by one renormalization pass. All-zero
/// scores give uniform weights with `degenerate` set.
pub fn scores_to_weights(clients: Vec<String>, scores: Vec<f64>) -> Result<ClientWeights> {
    if scores.is_empty() {
        return Err(Error::Aggregation("no clients to weight".into()));
    }
    if clients.len() != scores.len() {
        return Err(Error::Dimension {
            expected: clients.len(),
            found: scores.len(),
        });
    }
    if let Some(s) = scores.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(Error::Aggregation(format!(
            "score {s} is not a finite non-negative number"
        )));
    }
    let total: f64 = scores.iter().sum();
    let (weights, degenerate) = if total == 0.0 {
        (vec![1.0 / scores.len() as f64; scores.len()], true)
    } else {
        let raw: Vec<f64> = scores.iter().map(|s| s / total).collect();
        let again: f64 = raw.iter().sum();
        (raw.iter().map(|p| p / again).collect(), false)
    };
    Ok(ClientWeights {
        clients,
        weights,
        scores,
        lambdas: Vec::new(),
        degenerate,
    })
}

/// Scores every row of `matrix` under `ordering` and normalizes.
pub fn prioritized_weights(matrix: &CriteriaMatrix, ordering: &PriorityOrdering) -> Result<ClientWeights> {
    let mut scores = Vec::with_capacity(matrix.clients());
    let mut lambdas = Vec::with_capacity(matrix.clients());
    for row in matrix.rows() {
        let (s, l) = prioritized_score(row, ordering)?;
        scores.push(s);
        lambdas.push(l);
    }
    let mut w = scores_to_weights(matrix.cohort.clone(), scores)?;
    w.lambdas = lambdas;
    Ok(w)
}

/// FedAvg weights, proportional to training-set size.
pub fn fedavg_weights(cohort: &[&ClientDataset]) -> Result<ClientWeights> {
    let sizes = eval_dataset_size(cohort)?;
    scores_to_weights(cohort.iter().map(|c| c.client_id.clone()).collect(), sizes)
}

/// `Σ p_k w_k`, reduced coordinate by coordinate in cohort order.
pub fn aggregate_models(models: &[ParameterVector], weights: &ClientWeights) -> Result<ParameterVector> {
    let first = models
        .first()
        .ok_or_else(|| Error::Aggregation("no models to aggregate".into()))?;
    if models.len() != weights.len() {
        return Err(Error::Aggregation(format!(
            "{} models but {} weights",
            models.len(),
            weights.len()
        )));
    }
    let d = first.len();
    if let Some(m) = models.iter().find(|m| m.len() != d) {
        return Err(Error::Dimension {
            expected: d,
            found: m.len(),
        });
    }
    let sum: f64 = weights.weights.iter().sum();
    if weights.weights.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Aggregation(format!(
            "weights do not form a distribution (sum {sum})"
        )));
    }
    let mut out = vec![0.0; d];
    for (model, &p) in models.iter().zip(&weights.weights) {
        for (o, w) in out.iter_mut().zip(model.as_slice()) {
            *o += p * w;
        }
    }
    let out = ParameterVector::new(out);
    if !out.is_finite() {
        return Err(Error::Aggregation("aggregated model is not finite".into()));
    }
    Ok(out)
}

/// Named weighting strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorKind {
    Fedavg,
    Prioritized,
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggregatorKind::Fedavg => "fedavg",
            AggregatorKind::Prioritized => "prioritized",
        })
    }
}

impl FromStr for AggregatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fedavg" => Ok(AggregatorKind::Fedavg),
            "prioritized" => Ok(AggregatorKind::Prioritized),
            other => Err(Error::config(format!("unknown aggregator {other:?}"))),
        }
    }
}
