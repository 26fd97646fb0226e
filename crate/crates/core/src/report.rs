//! Runs every study on one configuration over several seeds and lays the
//! rounds-to-target results out as a table: the individual criteria, every
//! fixed ordering, and every initial ordering with per-round adjustment.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::aggregation::PriorityOrdering;
use crate::config::{DatasetConfig, ExperimentConfig, Study};
use crate::criteria::BUILTIN_IDS;
use crate::error::{Error, Result};
use crate::metrics::{format_cell, rounds_to_target, table_header};
use crate::orchestrator::{run_experiment, ExperimentLog};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetRow {
    pub target: f64,
    /// Table cells (pairs followed by their mean); each is the mean over
    /// seeds, `None` unless every seed reached it.
    pub cells: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub study: Study,
    pub label: String,
    pub targets: Vec<TargetRow>,
    /// Mean first-crossing round over seeds, targets and device
    /// percentages, counting an unreached cell as `max_rounds + 1`.
    pub censored_mean: f64,
    /// Rounds that fell back to the least-bad ordering, summed over seeds.
    pub fallback_rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyTable {
    pub seeds: Vec<u64>,
    pub max_rounds: usize,
    pub device_percentages: Vec<f64>,
    pub rows: Vec<StudyRow>,
}

impl StudyTable {
    pub fn rows_of(&self, study: Study) -> impl Iterator<Item = &StudyRow> {
        self.rows.iter().filter(move |r| r.study == study)
    }

    pub fn study_mean(&self, study: Study) -> Option<f64> {
        let v: Vec<f64> = self.rows_of(study).map(|r| r.censored_mean).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn row(&self, study: Study, label: &str) -> Option<&StudyRow> {
        self.rows_of(study).find(|r| r.label == label)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut head = vec!["study".to_owned(), "row".to_owned(), "target".to_owned()];
        head.extend(table_header(&self.device_percentages));
        head.push("censored_mean".into());
        head.push("fallback_rounds".into());
        w.write_record(&head)?;
        for row in &self.rows {
            for t in &row.targets {
                let mut rec = vec![row.study.to_string(), row.label.clone(), t.target.to_string()];
                rec.extend(t.cells.iter().map(|c| format_cell(*c)));
                rec.push(row.censored_mean.to_string());
                rec.push(row.fallback_rounds.to_string());
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Plain-text rendering for terminals.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let head = table_header(&self.device_percentages);
        let _ = writeln!(
            s,
            "{:<16} {:<10} {:>6} {} {:>9}",
            "study",
            "row",
            "target",
            head.iter().map(|h| format!("{h:>8}")).collect::<String>(),
            "censored"
        );
        for row in &self.rows {
            for t in &row.targets {
                let cells: String = t
                    .cells
                    .iter()
                    .map(|c| format!("{:>8}", c.map_or("-".to_owned(), |v| format!("{v:.1}"))))
                    .collect();
                let _ = writeln!(
                    s,
                    "{:<16} {:<10} {:>6} {} {:>9.2}",
                    row.study.name(),
                    row.label,
                    t.target,
                    cells,
                    row.censored_mean
                );
            }
        }
        for study in [Study::McaFixed, Study::FinalAdjusted] {
            if let Some(m) = self.study_mean(study) {
                let _ = writeln!(s, "{} mean over orderings (censored): {m:.2}", study.name());
            }
        }
        s
    }
}

/// The individual criteria, then every ordering under `mca-fixed`, then
/// every ordering under `final-adjusted`.
pub fn study_plan(criteria: &[String]) -> Vec<(Study, Vec<String>)> {
    let mut plan = vec![(Study::FedavgBaseline, Vec::new())];
    plan.extend(
        criteria
            .iter()
            .filter(|id| id.as_str() != BUILTIN_IDS[0])
            .map(|id| (Study::Individual, vec![id.clone()])),
    );
    let orderings: Vec<Vec<String>> = PriorityOrdering::all(criteria.len())
        .iter()
        .map(|o| o.indices().iter().map(|&i| criteria[i].clone()).collect())
        .collect();
    for study in [Study::McaFixed, Study::FinalAdjusted] {
        plan.extend(orderings.iter().map(|o| (study, o.clone())));
    }
    plan
}

fn row_label(study: Study, ordering: &[String]) -> String {
    match study {
        Study::FedavgBaseline => "ds".to_owned(),
        _ => ordering.join(">"),
    }
}

/// Config for one `(study, ordering, seed)` run derived from `base`.
pub fn run_config(base: &ExperimentConfig, study: Study, ordering: &[String], seed: u64) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.study = study;
    cfg.seed = seed;
    cfg.federation.aggregator = None;
    cfg.output.sweep = false;
    if study != Study::FedavgBaseline {
        cfg.criteria.ordering = ordering.to_vec();
    }
    if let DatasetConfig::Synthetic(s) = &mut cfg.dataset {
        s.seed = seed;
    }
    cfg
}

pub fn run_single(cfg: &ExperimentConfig) -> Result<ExperimentLog> {
    let (criteria, federation) = cfg.resolve()?;
    let dataset = cfg.load_dataset()?;
    run_experiment(&dataset, cfg.model_spec(&dataset), cfg.training(), federation, criteria)
}

pub fn run_studies(base: &ExperimentConfig, seeds: &[u64]) -> Result<StudyTable> {
    if seeds.is_empty() {
        return Err(Error::config("at least one seed is required"));
    }
    let plan = study_plan(&base.criteria.ids);
    let jobs: Vec<(usize, u64)> = (0..plan.len())
        .flat_map(|p| seeds.iter().map(move |&s| (p, s)))
        .collect();
    let logs = jobs
        .par_iter()
        .map(|&(p, s)| {
            let (study, ordering) = &plan[p];
            run_single(&run_config(base, *study, ordering, s))
        })
        .collect::<Result<Vec<_>>>()?;

    let targets = &base.federation.target_accuracies;
    let pcts = &base.federation.device_percentages;
    let max_rounds = base.federation.max_rounds;
    let rows = plan
        .iter()
        .enumerate()
        .map(|(p, (study, ordering))| {
            let runs: Vec<&ExperimentLog> = jobs
                .iter()
                .zip(&logs)
                .filter(|((q, _), _)| *q == p)
                .map(|(_, l)| l)
                .collect();
            let mut censored = Vec::new();
            let targets = targets
                .iter()
                .map(|&target| {
                    let per_seed: Vec<Vec<Option<f64>>> = runs
                        .iter()
                        .map(|log| rounds_to_target(&log.snapshots, target, pcts).table_row())
                        .collect();
                    for log in &runs {
                        let rtt = rounds_to_target(&log.snapshots, target, pcts);
                        censored.extend(rtt.cells.iter().map(|c| c.round.unwrap_or(max_rounds + 1) as f64));
                    }
                    let cells = (0..per_seed[0].len())
                        .map(|j| {
                            let vals: Option<Vec<f64>> = per_seed.iter().map(|r| r[j]).collect();
                            vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
                        })
                        .collect();
                    TargetRow { target, cells }
                })
                .collect();
            StudyRow {
                study: *study,
                label: row_label(*study, ordering),
                targets,
                censored_mean: if censored.is_empty() {
                    f64::NAN
                } else {
                    censored.iter().sum::<f64>() / censored.len() as f64
                },
                fallback_rounds: runs
                    .iter()
                    .map(|l| l.records.iter().filter(|r| r.fallback).count())
                    .sum(),
            }
        })
        .collect();
    Ok(StudyTable {
        seeds: seeds.to_vec(),
        max_rounds,
        device_percentages: pcts.clone(),
        rows,
    })
}
