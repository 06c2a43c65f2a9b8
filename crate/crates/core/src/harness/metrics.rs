//! Per-iteration metrics and their CSV form.
//!
//! Trial files have the columns
//! `iteration,train_loss,test_error,validation_error,attack_active,lambda,removed,err_removed,lfr_removed`.
//! Device lists are `;`-separated; an empty `lambda` means no Krum attack
//! was crafted that iteration, and empty `err_removed` / `lfr_removed`
//! cells mean the corresponding defense did not run. Floats use the
//! shortest representation that round-trips.
//!
//! The summary file has one row per trial and a final `mean` row with the
//! columns `config_hash,trial,selected_iteration,test_error,validation_error`.

use std::fs;
use std::path::Path;

use crate::{DataError, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub iteration: usize,
    /// Cross-entropy of the new global model on the training loss sample.
    pub train_loss: f64,
    pub test_error: f64,
    pub validation_error: f64,
    pub attack_active: bool,
    pub lambda: Option<f64>,
    /// Device ids removed by the defense.
    pub removed: Vec<usize>,
    pub err_removed: Option<Vec<usize>>,
    pub lfr_removed: Option<Vec<usize>>,
}

/// Outcome of one trial after model selection.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialSummary {
    pub trial: usize,
    pub selected_iteration: usize,
    pub test_error: f64,
    pub validation_error: f64,
}

fn join(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
}

fn csv_err(e: csv::Error) -> Error {
    DataError::Csv(e).into()
}

pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "iteration",
        "train_loss",
        "test_error",
        "validation_error",
        "attack_active",
        "lambda",
        "removed",
        "err_removed",
        "lfr_removed",
    ])
    .map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.iteration.to_string(),
            r.train_loss.to_string(),
            r.test_error.to_string(),
            r.validation_error.to_string(),
            u8::from(r.attack_active).to_string(),
            r.lambda.map(|l| l.to_string()).unwrap_or_default(),
            join(&r.removed),
            r.err_removed.as_deref().map(join).unwrap_or_default(),
            r.lfr_removed.as_deref().map(join).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn write_summary_csv(path: &Path, config_hash: &str, trials: &[TrialSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["config_hash", "trial", "selected_iteration", "test_error", "validation_error"])
        .map_err(csv_err)?;
    for t in trials {
        w.write_record([
            config_hash.to_string(),
            t.trial.to_string(),
            t.selected_iteration.to_string(),
            t.test_error.to_string(),
            t.validation_error.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let n = trials.len().max(1) as f64;
    let mean_test = trials.iter().map(|t| t.test_error).sum::<f64>() / n;
    let mean_val = trials.iter().map(|t| t.validation_error).sum::<f64>() / n;
    w.write_record([config_hash.to_string(), "mean".into(), String::new(), mean_test.to_string(), mean_val.to_string()])
        .map_err(csv_err)?;
    w.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// Creates `dir` if needed.
pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })
}
