//! Per-round client criteria and their cohort normalization.
//!
//! A criterion maps each cohort member to a non-negative raw value; the
//! matrix builder divides every column by its sum so each criterion is a
//! distribution over the cohort. Built-in criteria:
//!
//! | id   | raw value                                   |
//! |------|---------------------------------------------|
//! | `ds` | training-set size                           |
//! | `ld` | number of distinct training labels          |
//! | `md` | `1 / sqrt(‖w_global - w_local‖₂ + 1)`        |

use std::fmt;
use std::sync::Arc;

use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::model::{model_l2_distance, ParameterVector};

pub const DATASET_SIZE: &str = "ds";
pub const LABEL_DIVERSITY: &str = "ld";
pub const MODEL_DIVERGENCE: &str = "md";

pub const BUILTIN_IDS: [&str; 3] = [DATASET_SIZE, LABEL_DIVERSITY, MODEL_DIVERGENCE];

/// Everything a criterion may look at for one round's cohort. `cohort`,
/// `local_models` are parallel slices in client-id order.
pub struct MeasureContext<'a> {
    pub cohort: &'a [&'a ClientDataset],
    pub global_model: &'a ParameterVector,
    pub local_models: &'a [ParameterVector],
}

pub trait Criterion: Send + Sync {
    fn id(&self) -> &str;

    /// Raw, non-negative evaluations, one per cohort member.
    fn raw(&self, ctx: &MeasureContext<'_>) -> Result<Vec<f64>>;
}

pub struct DatasetSize;
pub struct LabelDiversity;
pub struct ModelDivergence;

fn require_some_data(id: &str, cohort: &[&ClientDataset]) -> Result<()> {
    if cohort.is_empty() {
        return Err(Error::criterion(id, "empty cohort"));
    }
    if cohort.iter().all(|c| c.train.is_empty()) {
        return Err(Error::criterion(id, "every cohort member has an empty training set"));
    }
    Ok(())
}

impl Criterion for DatasetSize {
    fn id(&self) -> &str {
        DATASET_SIZE
    }

    fn raw(&self, ctx: &MeasureContext<'_>) -> Result<Vec<f64>> {
        require_some_data(self.id(), ctx.cohort)?;
        Ok(ctx.cohort.iter().map(|c| c.train.len() as f64).collect())
    }
}

impl Criterion for LabelDiversity {
    fn id(&self) -> &str {
        LABEL_DIVERSITY
    }

    fn raw(&self, ctx: &MeasureContext<'_>) -> Result<Vec<f64>> {
        require_some_data(self.id(), ctx.cohort)?;
        Ok(ctx.cohort.iter().map(|c| c.label_diversity() as f64).collect())
    }
}

/// Penalty term for a client model at distance `distance` from the
/// broadcast model; always in (0, 1].
pub fn divergence_penalty(distance: f64) -> f64 {
    1.0 / (distance + 1.0).sqrt()
}

impl Criterion for ModelDivergence {
    fn id(&self) -> &str {
        MODEL_DIVERGENCE
    }

    fn raw(&self, ctx: &MeasureContext<'_>) -> Result<Vec<f64>> {
        if ctx.local_models.is_empty() {
            return Err(Error::criterion(self.id(), "empty cohort"));
        }
        ctx.local_models
            .iter()
            .map(|w| {
                model_l2_distance(ctx.global_model, w)
                    .map(divergence_penalty)
                    .map_err(|e| Error::criterion(self.id(), e.to_string()))
            })
            .collect()
    }
}

pub fn builtin(id: &str) -> Option<Arc<dyn Criterion>> {
    match id {
        DATASET_SIZE => Some(Arc::new(DatasetSize)),
        LABEL_DIVERSITY => Some(Arc::new(LabelDiversity)),
        MODEL_DIVERGENCE => Some(Arc::new(ModelDivergence)),
        _ => None,
    }
}

/// Ordered registry of criteria. Column `i` of every matrix and index `i`
/// of every priority ordering refer to `criteria[i]`.
#[derive(Clone)]
pub struct CriteriaSet {
    criteria: Vec<Arc<dyn Criterion>>,
}

impl fmt::Debug for CriteriaSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.ids()).finish()
    }
}

impl CriteriaSet {
    pub fn new(criteria: Vec<Arc<dyn Criterion>>) -> Result<Self> {
        if criteria.is_empty() {
            return Err(Error::config("at least one criterion is required"));
        }
        for (i, c) in criteria.iter().enumerate() {
            if criteria[..i].iter().any(|o| o.id() == c.id()) {
                return Err(Error::config(format!("criterion {} registered twice", c.id())));
            }
        }
        Ok(CriteriaSet { criteria })
    }

    /// Built-in criteria by id, in the given order.
    pub fn from_ids<S: AsRef<str>>(ids: &[S]) -> Result<Self> {
        let criteria = ids
            .iter()
            .map(|id| builtin(id.as_ref()).ok_or_else(|| Error::config(format!("unknown criterion {:?}", id.as_ref()))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(criteria)
    }

    pub fn builtins() -> Self {
        Self::from_ids(&BUILTIN_IDS).expect("built-ins are distinct")
    }

    pub fn register(&mut self, criterion: Arc<dyn Criterion>) -> Result<()> {
        if self.index_of(criterion.id()).is_some() {
            return Err(Error::config(format!("criterion {} registered twice", criterion.id())));
        }
        self.criteria.push(criterion);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.criteria.len()
    }

    pub fn is_empty(&self) -> bool {
        self.criteria.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.criteria.iter().map(|c| c.id()).collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.criteria.iter().position(|c| c.id() == id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<dyn Criterion>> {
        self.criteria.iter()
    }
}

/// Divides `raw` by its sum. An all-zero column becomes uniform and the
/// second return value is `true`.
pub fn normalize(id: &str, raw: &[f64]) -> Result<(Vec<f64>, bool)> {
    if raw.is_empty() {
        return Err(Error::criterion(id, "empty cohort"));
    }
    if let Some(v) = raw.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::criterion(
            id,
            format!("raw value {v} is not a finite non-negative number"),
        ));
    }
    let total: f64 = raw.iter().sum();
    if total == 0.0 {
        let u = 1.0 / raw.len() as f64;
        return Ok((vec![u; raw.len()], true));
    }
    Ok((raw.iter().map(|v| v / total).collect(), false))
}

fn normalized(c: &dyn Criterion, ctx: &MeasureContext<'_>) -> Result<Vec<f64>> {
    let raw = c.raw(ctx)?;
    normalize(c.id(), &raw).map(|(col, _)| col)
}

/// `|D_k| / Σ|D_i|` over the cohort.
pub fn eval_dataset_size(cohort: &[&ClientDataset]) -> Result<Vec<f64>> {
    let ctx = MeasureContext {
        cohort,
        global_model: &ParameterVector::zeros(0),
        local_models: &[],
    };
    normalized(&DatasetSize, &ctx)
}

/// `δ(D_k) / Σδ(D_i)` over the cohort.
pub fn eval_label_diversity(cohort: &[&ClientDataset]) -> Result<Vec<f64>> {
    let ctx = MeasureContext {
        cohort,
        global_model: &ParameterVector::zeros(0),
        local_models: &[],
    };
    normalized(&LabelDiversity, &ctx)
}

/// `φ_k / Σφ_i` against the broadcast model `global`.
pub fn eval_model_divergence(global: &ParameterVector, local_models: &[ParameterVector]) -> Result<Vec<f64>> {
    let ctx = MeasureContext {
        cohort: &[],
        global_model: global,
        local_models,
    };
    normalized(&ModelDivergence, &ctx)
}

/// Normalized criterion evaluations for one round's cohort: one row per
/// client, one column per registered criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct CriteriaMatrix {
    pub round: usize,
    pub cohort: Vec<String>,
    pub criteria: Vec<String>,
    rows: Vec<Vec<f64>>,
    pub degenerate_columns: Vec<bool>,
}

impl CriteriaMatrix {
    /// Builds a matrix from already-normalized columns.
    pub fn from_columns(
        round: usize,
        cohort: Vec<String>,
        criteria: Vec<String>,
        columns: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if columns.len() != criteria.len() {
            return Err(Error::Dimension {
                expected: criteria.len(),
                found: columns.len(),
            });
        }
        if let Some(col) = columns.iter().find(|c| c.len() != cohort.len()) {
            return Err(Error::Dimension {
                expected: cohort.len(),
                found: col.len(),
            });
        }
        let rows = (0..cohort.len())
            .map(|k| columns.iter().map(|col| col[k]).collect())
            .collect();
        Ok(CriteriaMatrix {
            round,
            cohort,
            degenerate_columns: vec![false; criteria.len()],
            criteria,
            rows,
        })
    }

    pub fn clients(&self) -> usize {
        self.rows.len()
    }

    pub fn criteria_count(&self) -> usize {
        self.criteria.len()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[i]).collect()
    }
}

/// Measures every registered criterion once on the cohort and normalizes
/// each column.
pub fn build_criteria_matrix(
    round: usize,
    cohort_ids: &[String],
    ctx: &MeasureContext<'_>,
    criteria: &CriteriaSet,
) -> Result<CriteriaMatrix> {
    let mut columns = Vec::with_capacity(criteria.len());
    let mut degenerate = Vec::with_capacity(criteria.len());
    for c in criteria.iter() {
        let raw = c.raw(ctx).map_err(|e| match e {
            Error::Criterion { .. } => e,
            other => Error::criterion(c.id(), other.to_string()),
        })?;
        if raw.len() != cohort_ids.len() {
            return Err(Error::criterion(
                c.id(),
                format!("{} values for a cohort of {}", raw.len(), cohort_ids.len()),
            ));
        }
        let (col, flag) = normalize(c.id(), &raw)?;
        columns.push(col);
        degenerate.push(flag);
    }
    let mut m = CriteriaMatrix::from_columns(
        round,
        cohort_ids.to_vec(),
        criteria.ids().into_iter().map(str::to_owned).collect(),
        columns,
    )?;
    m.degenerate_columns = degenerate;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;

    fn client(id: &str, labels: &[usize]) -> ClientDataset {
        ClientDataset {
            client_id: id.into(),
            train: labels
                .iter()
                .map(|&label| Sample {
                    features: vec![0.0],
                    label,
                })
                .collect(),
            test: vec![],
        }
    }

    fn sized(n: usize) -> ClientDataset {
        client("x", &vec![0; n])
    }

    fn close(a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn dataset_size_examples() {
        let (a, b) = (sized(30), sized(70));
        close(&eval_dataset_size(&[&a, &b]).unwrap(), &[0.3, 0.7]);
        let c = sized(50);
        close(&eval_dataset_size(&[&c, &c, &c]).unwrap(), &[1.0 / 3.0; 3]);
        let v: Vec<_> = (1..=4).map(sized).collect();
        let refs: Vec<_> = v.iter().collect();
        close(&eval_dataset_size(&refs).unwrap(), &[0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn all_empty_cohort_is_an_error() {
        let e = sized(0);
        assert!(matches!(eval_dataset_size(&[&e, &e]), Err(Error::Criterion { .. })));
        assert!(matches!(eval_label_diversity(&[&e]), Err(Error::Criterion { .. })));
        assert!(matches!(eval_dataset_size(&[]), Err(Error::Criterion { .. })));
    }

    #[test]
    fn label_diversity_examples() {
        let a = client("a", &[0, 1]);
        let b = client("b", &[2, 3, 3]);
        close(&eval_label_diversity(&[&a, &b]).unwrap(), &[0.5, 0.5]);
        let c = client("c", &[4]);
        let d = client("d", &[0, 1, 2, 2]);
        close(&eval_label_diversity(&[&c, &d]).unwrap(), &[0.25, 0.75]);
        let e = client("e", &[0, 0]);
        let f = client("f", &[0, 1]);
        let g = client("g", &[0, 1, 2, 3, 4, 5]);
        close(
            &eval_label_diversity(&[&e, &f, &g]).unwrap(),
            &[1.0 / 9.0, 2.0 / 9.0, 6.0 / 9.0],
        );
    }

    #[test]
    fn model_divergence_examples() {
        let g = ParameterVector::new(vec![1.0, 2.0]);
        close(
            &eval_model_divergence(&g, &[g.clone(), g.clone(), g.clone()]).unwrap(),
            &[1.0 / 3.0; 3],
        );
        // distance 3 gives φ = 1/2
        let far = ParameterVector::new(vec![1.0, 5.0]);
        close(
            &eval_model_divergence(&g, &[g.clone(), far]).unwrap(),
            &[2.0 / 3.0, 1.0 / 3.0],
        );
        let short = ParameterVector::new(vec![1.0]);
        assert!(matches!(
            eval_model_divergence(&g, &[short]),
            Err(Error::Criterion { .. })
        ));
    }

    #[test]
    fn penalty_bounds() {
        assert_eq!(divergence_penalty(0.0), 1.0);
        assert_eq!(divergence_penalty(3.0), 0.5);
        assert!(divergence_penalty(1e300) > 0.0);
    }

    #[test]
    fn zero_columns_fall_back_to_uniform() {
        let (col, flag) = normalize("x", &[0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(flag);
        close(&col, &[0.25; 4]);
        assert!(normalize("x", &[1.0, -1.0]).is_err());
        assert!(normalize("x", &[f64::NAN]).is_err());
    }

    #[test]
    fn singleton_cohort_is_all_ones() {
        let a = client("a", &[0, 1, 2]);
        let g = ParameterVector::new(vec![0.0]);
        let locals = [ParameterVector::new(vec![4.0])];
        let cohort = [&a];
        let ctx = MeasureContext {
            cohort: &cohort,
            global_model: &g,
            local_models: &locals,
        };
        let m = build_criteria_matrix(1, &["a".into()], &ctx, &CriteriaSet::builtins()).unwrap();
        assert_eq!(m.row(0), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn registry_rejects_unknown_and_duplicate_ids() {
        assert!(CriteriaSet::from_ids(&["ds", "zz"]).is_err());
        assert!(CriteriaSet::from_ids(&["ds", "ds"]).is_err());
        let mut set = CriteriaSet::from_ids(&["ds"]).unwrap();
        assert!(set.register(Arc::new(DatasetSize)).is_err());
        set.register(Arc::new(ModelDivergence)).unwrap();
        assert_eq!(set.ids(), vec!["ds", "md"]);
    }

    struct Failing;
    impl Criterion for Failing {
        fn id(&self) -> &str {
            "broken"
        }
        fn raw(&self, _: &MeasureContext<'_>) -> Result<Vec<f64>> {
            Err(Error::Validation("sensor offline".into()))
        }
    }

    #[test]
    fn provider_errors_carry_the_criterion_id() {
        let a = client("a", &[0]);
        let g = ParameterVector::new(vec![0.0]);
        let locals = [g.clone()];
        let cohort = [&a];
        let ctx = MeasureContext {
            cohort: &cohort,
            global_model: &g,
            local_models: &locals,
        };
        let mut set = CriteriaSet::from_ids(&["ds"]).unwrap();
        set.register(Arc::new(Failing)).unwrap();
        match build_criteria_matrix(1, &["a".into()], &ctx, &set) {
            Err(Error::Criterion { criterion, .. }) => assert_eq!(criterion, "broken"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
