//! On-disk layout of an experiment:
//!
//! ```text
//! <dir>/manifest.json          grid snapshot, provider descriptors, run table
//! <dir>/runs/<run_id>.jsonl    one JSON record per line, newest last
//! ```
//!
//! The manifest is rewritten atomically after every finished run. Run files are
//! only ever appended to, so a crash can at worst leave a torn last line, which
//! readers skip.

use std::collections::HashSet;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::SourceDocument;
use crate::embed::hex;
use crate::evaluation::EvalReport;
use crate::rag::{now_ms, GenerationRun, RunConfig};

use super::grid::{expand_grid, ExperimentGrid};
use super::RunnerError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RUNS_DIR: &str = "runs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pending,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub run_id: String,
    pub config: RunConfig,
    pub status: RunStatus,
    /// Run record path relative to the manifest directory.
    pub artifact: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderDescriptors {
    pub retrieval_embedding: String,
    pub llm: String,
    pub evaluation_embedding: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_id: String,
    pub grid: ExperimentGrid,
    pub corpus_hash: String,
    pub template_version: String,
    pub providers: ProviderDescriptors,
    pub created_at_ms: u64,
    pub entries: Vec<RunEntry>,
}

/// Hash over every document's id, rank and normalized text, in rank order.
pub fn corpus_hash(docs: &[SourceDocument]) -> String {
    let mut sorted: Vec<&SourceDocument> = docs.iter().collect();
    sorted.sort_by(|a, b| (a.priority_rank, &a.doc_id).cmp(&(b.priority_rank, &b.doc_id)));
    let mut hasher = Sha256::new();
    for doc in sorted {
        hasher.update(doc.doc_id.as_bytes());
        hasher.update([0]);
        hasher.update(doc.priority_rank.to_le_bytes());
        hasher.update((doc.text.len() as u64).to_le_bytes());
        hasher.update(doc.text.as_bytes());
    }
    hex(&hasher.finalize())
}

impl RunManifest {
    /// Schedules every grid point as a pending run.
    pub fn new(
        grid: ExperimentGrid,
        corpus: &[SourceDocument],
        template_version: &str,
        providers: ProviderDescriptors,
    ) -> Result<Self, RunnerError> {
        let entries = expand_grid(&grid)?
            .into_iter()
            .map(|config| {
                let run_id = config.run_id();
                RunEntry {
                    artifact: format!("{RUNS_DIR}/{run_id}.jsonl"),
                    run_id,
                    config,
                    status: RunStatus::Pending,
                    error: None,
                }
            })
            .collect();
        let created_at_ms = now_ms();
        let corpus_hash = corpus_hash(corpus);
        let manifest_id = format!("{}-{}-{}", grid.task_id, &corpus_hash[..8], created_at_ms);
        Ok(Self {
            manifest_id,
            grid,
            corpus_hash,
            template_version: template_version.into(),
            providers,
            created_at_ms,
            entries,
        })
    }

    /// Checks that the run table is exactly the grid expansion.
    pub fn validate(&self) -> Result<(), RunnerError> {
        let expected =
            expand_grid(&self.grid).map_err(|e| RunnerError::ManifestCorrupt(e.to_string()))?;
        if expected.len() != self.entries.len() {
            return Err(RunnerError::ManifestCorrupt(format!(
                "grid schedules {} runs, manifest lists {}",
                expected.len(),
                self.entries.len()
            )));
        }
        let mut seen = HashSet::new();
        for (entry, config) in self.entries.iter().zip(&expected) {
            if !seen.insert(entry.run_id.as_str()) {
                return Err(RunnerError::ManifestCorrupt(format!(
                    "run {} listed twice",
                    entry.run_id
                )));
            }
            if &entry.config != config || entry.run_id != config.run_id() {
                return Err(RunnerError::ManifestCorrupt(format!(
                    "entry {} does not match the grid",
                    entry.run_id
                )));
            }
        }
        Ok(())
    }

    pub fn count(&self, status: RunStatus) -> usize {
        self.entries.iter().filter(|e| e.status == status).count()
    }

    pub fn to_json(&self) -> Result<String, RunnerError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// One line of a run record file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunRecord {
    Generation(Box<GenerationRun>),
    Evaluation(EvalReport),
}

/// Directory holding one manifest and its run records.
#[derive(Debug, Clone)]
pub struct ManifestStore {
    dir: PathBuf,
}

impl ManifestStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dir.join(MANIFEST_FILE)
    }

    pub fn exists(&self) -> bool {
        self.manifest_path().is_file()
    }

    /// Writes a new manifest; fails if one is already present.
    pub fn create(&self, manifest: &RunManifest) -> Result<(), RunnerError> {
        if self.exists() {
            return Err(RunnerError::ManifestExists(self.manifest_path()));
        }
        fs::create_dir_all(self.dir.join(RUNS_DIR))?;
        self.save(manifest)
    }

    pub fn save(&self, manifest: &RunManifest) -> Result<(), RunnerError> {
        let tmp = self.dir.join(format!("{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, manifest.to_json()?)?;
        fs::rename(&tmp, self.manifest_path())?;
        Ok(())
    }

    pub fn load(&self) -> Result<RunManifest, RunnerError> {
        let text = fs::read_to_string(self.manifest_path())?;
        let manifest: RunManifest =
            serde_json::from_str(&text).map_err(|e| RunnerError::ManifestCorrupt(e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn append_record(&self, artifact: &str, record: &RunRecord) -> Result<(), RunnerError> {
        let path = self.dir.join(artifact);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        file.write_all(line.as_bytes())?;
        file.sync_data()?;
        Ok(())
    }

    /// All intact records of a run file, oldest first.
    pub fn read_records(&self, artifact: &str) -> Result<Vec<RunRecord>, RunnerError> {
        read_records(&self.dir.join(artifact))
    }

    /// The newest generation record of a run.
    pub fn latest_generation(&self, artifact: &str) -> Result<GenerationRun, RunnerError> {
        self.read_records(artifact)?
            .into_iter()
            .rev()
            .find_map(|r| match r {
                RunRecord::Generation(g) => Some(*g),
                RunRecord::Evaluation(_) => None,
            })
            .ok_or_else(|| {
                RunnerError::ManifestCorrupt(format!("no generation record in {artifact}"))
            })
    }
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, RunnerError> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => records.push(r),
            Err(e) => log::warn!(
                "{}:{}: skipping unreadable record: {e}",
                path.display(),
                i + 1
            ),
        }
    }
    Ok(records)
}
