//! Run metrics under one fixed schema, written as CSV or JSON.
//!
//! Every row is a single scalar observation:
//! `run_id, seed, family, variant, epoch, split, metric_name, metric_value`.
//! Epoch rows carry the training curves; the `test` rows are written once
//! per run at the best-validation epoch. Floats go through Rust's default
//! shortest-roundtrip formatting, so files are identical across reruns.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::RunResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run_id: String,
    pub seed: u64,
    pub family: String,
    pub variant: String,
    pub epoch: usize,
    pub split: String,
    pub metric_name: String,
    pub metric_value: f64,
}

pub const CSV_HEADER: &str = "run_id,seed,family,variant,epoch,split,metric_name,metric_value";

/// Flatten one run into schema rows: per-epoch train/val losses and the
/// validation metric, then the test pair stamped with the best epoch.
pub fn rows_from_run(
    run_id: &str,
    seed: u64,
    family: &str,
    variant: &str,
    result: &RunResult,
) -> Vec<MetricRow> {
    let row = |epoch: usize, split: &str, name: &str, value: f64| MetricRow {
        run_id: run_id.to_string(),
        seed,
        family: family.to_string(),
        variant: variant.to_string(),
        epoch,
        split: split.to_string(),
        metric_name: name.to_string(),
        metric_value: value,
    };
    let mut rows = Vec::new();
    for e in &result.history {
        rows.push(row(e.epoch, "train", "loss", e.train_loss));
        if e.val_loss.is_finite() {
            rows.push(row(e.epoch, "val", "loss", e.val_loss));
            rows.push(row(e.epoch, "val", result.metric_name, e.val_metric));
        }
    }
    rows.push(row(result.best_epoch, "test", "loss", result.test_loss));
    rows.push(row(
        result.best_epoch,
        "test",
        result.metric_name,
        result.test_metric,
    ));
    rows
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    writeln!(w, "{CSV_HEADER}").map_err(io_err)?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            csv_field(&r.run_id),
            r.seed,
            csv_field(&r.family),
            csv_field(&r.variant),
            r.epoch,
            csv_field(&r.split),
            csv_field(&r.metric_name),
            r.metric_value
        )
        .map_err(io_err)?;
    }
    Ok(())
}

pub fn write_json(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), rows)
        .map_err(|e| Error::config(format!("writing {}: {e}", path.display())))?;
    Ok(())
}

/// Read rows back from a JSON results file.
pub fn read_json(path: &Path) -> Result<Vec<MetricRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| Error::config(format!("reading {}: {e}", path.display())))
}
