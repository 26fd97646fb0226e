//! Config-driven runs and their on-disk artifacts.
//!
//! A run directory holds:
//!
//! - `rounds.csv`: one row per round plus the rounds-to-target block
//! - `clients.csv`: per-round, per-client accuracies
//! - `summary.json`: final accuracy, rounds-to-target, fallback counts
//! - `manifest.json`: effective config, its hash, seed and tool version

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::aggregation::PriorityOrdering;
use crate::config::{ExperimentConfig, Overrides, Study, Violation};
use crate::error::{Error, Result};
use crate::metrics::{export_client_csv, export_csv, rounds_to_target, RoundsToTarget};
use crate::orchestrator::ExperimentLog;
use crate::report::{run_single, run_studies, StudyTable};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_hash: String,
    pub seed: u64,
    pub study: Study,
    pub ordering: &'a [String],
    pub config: &'a ExperimentConfig,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub rounds: usize,
    pub final_accuracy: Option<f64>,
    pub fallback_rounds: usize,
    pub backtracks: usize,
    pub degenerate_rounds: usize,
    pub rounds_to_target: Vec<RoundsToTarget>,
}

pub fn summarize(log: &ExperimentLog, cfg: &ExperimentConfig) -> Summary {
    Summary {
        rounds: log.records.len(),
        final_accuracy: log.records.last().map(|r| r.accepted_accuracy),
        fallback_rounds: log.records.iter().filter(|r| r.fallback).count(),
        backtracks: log.records.iter().map(|r| r.backtracks()).sum(),
        degenerate_rounds: log.records.iter().filter(|r| r.any_degenerate()).count(),
        rounds_to_target: cfg
            .federation
            .target_accuracies
            .iter()
            .map(|&t| rounds_to_target(&log.snapshots, t, &cfg.federation.device_percentages))
            .collect(),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::File {
        path: dir.to_owned(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|source| Error::File {
        path: path.to_owned(),
        source,
    })
}

/// Writes the artifacts of a finished run into `dir`.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, log: &ExperimentLog) -> Result<()> {
    create_dir(dir)?;
    let f = &cfg.federation;
    export_csv(
        log,
        &f.target_accuracies,
        &f.device_percentages,
        &dir.join("rounds.csv"),
    )?;
    export_client_csv(log, &dir.join("clients.csv"))?;
    write_json(&dir.join("summary.json"), &summarize(log, cfg))?;
    let manifest = Manifest {
        tool: "fedprio",
        version: VERSION,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        study: cfg.study,
        ordering: &cfg.criteria.ordering,
        config: cfg,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

/// Directory name for an ordering, e.g. `md-ds-ld`.
pub fn ordering_dir(ordering: &[String]) -> String {
    ordering.join("-")
}

/// Runs `cfg` (or, with `output.sweep`, every ordering of its criteria)
/// and returns the run directories written.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let violations = cfg.validate();
    if !violations.is_empty() {
        return Err(Error::config(
            violations
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; "),
        ));
    }
    let mut dirs = Vec::new();
    if cfg.output.sweep {
        for ordering in PriorityOrdering::all(cfg.criteria.ids.len()) {
            let mut run_cfg = cfg.clone();
            run_cfg.output.sweep = false;
            run_cfg.criteria.ordering = ordering
                .indices()
                .iter()
                .map(|&i| cfg.criteria.ids[i].clone())
                .collect();
            let dir = cfg.output.dir.join(ordering_dir(&run_cfg.criteria.ordering));
            run_cfg.output.dir = dir.clone();
            let log = run_single(&run_cfg)?;
            write_run(&dir, &run_cfg, &log)?;
            dirs.push(dir);
        }
    } else {
        let log = run_single(cfg)?;
        write_run(&cfg.output.dir, cfg, &log)?;
        dirs.push(cfg.output.dir.clone());
    }
    Ok(dirs)
}

pub fn load_with_overrides(path: Option<&Path>, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(overrides);
    Ok(cfg)
}

/// Parses and validates without running anything.
pub fn validate(path: &Path, overrides: &Overrides) -> Result<Vec<Violation>> {
    Ok(load_with_overrides(Some(path), overrides)?.validate())
}

/// Runs every study over `seeds` and writes `table.csv`, `table.txt` and
/// `table.json` into the output directory.
pub fn run_table(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<StudyTable> {
    let violations = cfg.validate();
    if !violations.is_empty() {
        return Err(Error::config(
            violations
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; "),
        ));
    }
    let table = run_studies(cfg, seeds)?;
    let dir = &cfg.output.dir;
    create_dir(dir)?;
    let path = dir.join("table.csv");
    let file = fs::File::create(&path).map_err(|source| Error::File { path, source })?;
    table.write_csv(file)?;
    fs::write(dir.join("table.txt"), table.render())?;
    write_json(&dir.join("table.json"), &table)?;
    Ok(table)
}
