//! Accuracy summaries and CSV export.
//!
//! Clients with an empty test set are carried in snapshots with
//! `test_size == 0`; they get no weight in the global accuracy and are not
//! counted as devices by the percentile and rounds-to-target metrics.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::orchestrator::ExperimentLog;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientAccuracy {
    pub client_id: String,
    pub accuracy: f64,
    pub test_size: usize,
}

/// Per-client accuracies of one model at the end of round `round`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracySnapshot {
    pub round: usize,
    pub clients: Vec<ClientAccuracy>,
}

impl AccuracySnapshot {
    /// Clients that have a test set.
    pub fn devices(&self) -> impl Iterator<Item = &ClientAccuracy> {
        self.clients.iter().filter(|c| c.test_size > 0)
    }
}

/// `Σ acc_k n_k / Σ n_k` over clients with `n_k > 0`.
pub fn weighted_global_accuracy(snapshot: &AccuracySnapshot) -> Result<f64> {
    let (num, den) = snapshot.devices().fold((0.0, 0usize), |(num, den), c| {
        (num + c.accuracy * c.test_size as f64, den + c.test_size)
    });
    if den == 0 {
        return Err(Error::Metric(format!(
            "round {}: every evaluated client has an empty test set",
            snapshot.round
        )));
    }
    Ok(num / den as f64)
}

/// Nearest-rank percentile of the unweighted per-client accuracies.
pub fn percentile_accuracy(snapshot: &AccuracySnapshot, p: f64) -> Result<f64> {
    let mut acc: Vec<f64> = snapshot.devices().map(|c| c.accuracy).collect();
    if acc.is_empty() {
        return Err(Error::Metric("percentile of an empty snapshot".into()));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::Metric(format!("percentile {p} outside [0, 100]")));
    }
    acc.sort_by(f64::total_cmp);
    let rank = ((p / 100.0 * acc.len() as f64 - 1e-9).ceil() as usize).clamp(1, acc.len());
    Ok(acc[rank - 1])
}

/// Number of devices out of `devices` that make up `pct` percent,
/// rounded up.
pub fn required_devices(devices: usize, pct: f64) -> usize {
    (pct / 100.0 * devices as f64 - 1e-9).ceil().max(0.0) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetCell {
    pub device_pct: f64,
    /// First round meeting the threshold; `None` if never met.
    pub round: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundsToTarget {
    pub target: f64,
    pub cells: Vec<TargetCell>,
}

/// For each device percentage `q`, the first round at which at least
/// `⌈q · |A|⌉` devices have local accuracy `≥ target`.
pub fn rounds_to_target(trajectories: &[AccuracySnapshot], target: f64, device_pcts: &[f64]) -> RoundsToTarget {
    let hits: Vec<(usize, usize, usize)> = trajectories
        .iter()
        .map(|s| {
            let devices = s.devices().count();
            let reached = s.devices().filter(|c| c.accuracy >= target).count();
            (s.round, devices, reached)
        })
        .collect();
    let cells = device_pcts
        .iter()
        .map(|&pct| TargetCell {
            device_pct: pct,
            round: hits
                .iter()
                .find(|&&(_, devices, reached)| devices > 0 && reached >= required_devices(devices, pct))
                .map(|&(round, _, _)| round),
        })
        .collect();
    RoundsToTarget { target, cells }
}

impl RoundsToTarget {
    /// First-crossing rounds never decrease as the device share grows.
    pub fn is_monotone(&self) -> bool {
        let mut cells: Vec<&TargetCell> = self.cells.iter().collect();
        cells.sort_by(|a, b| a.device_pct.total_cmp(&b.device_pct));
        cells.windows(2).all(|w| match (w[0].round, w[1].round) {
            (Some(a), Some(b)) => a <= b,
            (None, Some(_)) => false,
            _ => true,
        })
    }

    /// Table-style row: each cell followed, after every second cell, by
    /// the mean of that pair. Unreached cells and means over them are `None`.
    pub fn table_row(&self) -> Vec<Option<f64>> {
        let mut row = Vec::new();
        for pair in self.cells.chunks(2) {
            row.extend(pair.iter().map(|c| c.round.map(|r| r as f64)));
            if pair.len() == 2 {
                row.push(match (pair[0].round, pair[1].round) {
                    (Some(a), Some(b)) => Some((a + b) as f64 / 2.0),
                    _ => None,
                });
            }
        }
        row
    }
}

pub fn table_header(device_pcts: &[f64]) -> Vec<String> {
    let mut head = Vec::new();
    for (g, pair) in device_pcts.chunks(2).enumerate() {
        head.extend(pair.iter().map(|p| format!("pct_{p}")));
        if pair.len() == 2 {
            head.push(format!("mean_{}", g + 1));
        }
    }
    head
}

pub fn format_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |v| v.to_string())
}

pub const ROUND_COLUMNS: [&str; 8] = [
    "round",
    "ordering",
    "attempts",
    "global_accuracy",
    "p10",
    "p90",
    "fallback",
    "degenerate",
];

/// Writes one row per round, then a blank line and a rounds-to-target
/// block per target accuracy. An empty log produces the header only.
pub fn write_csv<W: Write>(log: &ExperimentLog, targets: &[f64], device_pcts: &[f64], out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(ROUND_COLUMNS)?;
        for (rec, snap) in log.records.iter().zip(&log.snapshots) {
            w.write_record([
                rec.round.to_string(),
                log.ordering_label(rec.accepted_ordering.as_ref()),
                rec.attempts.len().to_string(),
                rec.accepted_accuracy.to_string(),
                percentile_accuracy(snap, 10.0)?.to_string(),
                percentile_accuracy(snap, 90.0)?.to_string(),
                rec.fallback.to_string(),
                rec.any_degenerate().to_string(),
            ])?;
        }
        w.flush()?;
    }
    if !log.records.is_empty() && !targets.is_empty() {
        writeln!(out)?;
        let mut w = csv::Writer::from_writer(&mut out);
        let mut head = vec!["target".to_owned()];
        head.extend(table_header(device_pcts));
        w.write_record(&head)?;
        for &target in targets {
            let rtt = rounds_to_target(&log.snapshots, target, device_pcts);
            if !rtt.is_monotone() {
                return Err(Error::Metric(format!("rounds-to-target for {target} is not monotone")));
            }
            let mut row = vec![target.to_string()];
            row.extend(rtt.table_row().into_iter().map(format_cell));
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    out.flush()?;
    Ok(())
}

pub fn export_csv(log: &ExperimentLog, targets: &[f64], device_pcts: &[f64], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|source| Error::File {
        path: path.to_owned(),
        source,
    })?;
    write_csv(log, targets, device_pcts, file)
}

/// Long-format per-client accuracies: `round,client_id,test_size,accuracy`.
pub fn export_client_csv(log: &ExperimentLog, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|source| Error::File {
        path: path.to_owned(),
        source,
    })?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["round", "client_id", "test_size", "accuracy"])?;
    for snap in &log.snapshots {
        for c in &snap.clients {
            w.write_record([
                snap.round.to_string(),
                c.client_id.clone(),
                c.test_size.to_string(),
                c.accuracy.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
