//! Experiment grids: expansion, resumable execution and reporting.

mod execute;
mod grid;
mod manifest;
mod report;

use std::path::PathBuf;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::evaluation::EvalError;
use crate::rag::RagError;

pub use execute::{execute, ExecuteOptions, ExecuteSummary};
pub use grid::{derive_seed, expand_grid, ExperimentGrid};
pub use manifest::{
    corpus_hash, read_records, ManifestStore, ProviderDescriptors, RunEntry, RunManifest,
    RunRecord, RunStatus, MANIFEST_FILE, RUNS_DIR,
};
pub use report::{report, AnovaEntry, ConsistencyRow, PrecisionCell, ReportBundle, RunScore};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("manifest is corrupt: {0}")]
    ManifestCorrupt(String),
    #[error("manifest already exists at {0}; pass --resume to continue it")]
    ManifestExists(PathBuf),
    #[error("no completed runs to report on")]
    NoCompletedRuns,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Rag(#[from] RagError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[cfg(test)]
mod tests;
