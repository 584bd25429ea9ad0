use std::collections::VecDeque;
use std::sync::{mpsc, Mutex};

use crate::corpus::SourceDocument;
use crate::rag::{now_ms, GenerationRun, RagEngine, RunOutcome};

use super::manifest::{ManifestStore, RunManifest, RunRecord, RunStatus};
use super::RunnerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecuteOptions {
    /// Keep finished runs instead of re-running the whole grid.
    pub resume: bool,
    /// Worker threads issuing runs concurrently.
    pub parallel: usize,
    /// Stop after this many runs have been executed in this call.
    pub max_runs: Option<usize>,
}

impl Default for ExecuteOptions {
    fn default() -> Self {
        Self {
            resume: false,
            parallel: 1,
            max_runs: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExecuteSummary {
    pub executed: usize,
    pub done: usize,
    pub failed: usize,
    pub skipped: usize,
    pub remaining: usize,
}

/// Runs every scheduled entry that still needs running. Each finished run is
/// appended to its record file and the manifest is saved before the next
/// result is handled; all writes happen on the calling thread.
pub fn execute(
    store: &ManifestStore,
    manifest: &mut RunManifest,
    engine: &RagEngine,
    corpus: &[SourceDocument],
    options: ExecuteOptions,
) -> Result<ExecuteSummary, RunnerError> {
    manifest.validate()?;
    if !options.resume {
        for entry in &mut manifest.entries {
            entry.status = RunStatus::Pending;
            entry.error = None;
        }
        store.save(manifest)?;
    }

    let mut todo: VecDeque<usize> = manifest
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.status != RunStatus::Done)
        .map(|(i, _)| i)
        .collect();
    let skipped = manifest.entries.len() - todo.len();
    if let Some(max) = options.max_runs {
        todo.truncate(max);
    }
    let mut summary = ExecuteSummary {
        skipped,
        ..Default::default()
    };
    if todo.is_empty() {
        return Ok(summary);
    }

    let configs: Vec<_> = todo
        .iter()
        .map(|&i| (i, manifest.entries[i].config.clone()))
        .collect();
    let queue = Mutex::new(configs.into_iter().collect::<VecDeque<_>>());
    let workers = options.parallel.clamp(1, todo.len());
    let (tx, rx) = mpsc::channel::<(usize, GenerationRun)>();

    std::thread::scope(|scope| -> Result<(), RunnerError> {
        for _ in 0..workers {
            let tx = tx.clone();
            let queue = &queue;
            scope.spawn(move || loop {
                let Some((idx, config)) = queue.lock().unwrap().pop_front() else {
                    break;
                };
                let run =
                    engine
                        .run_generation(&config, corpus)
                        .unwrap_or_else(|e| GenerationRun {
                            run_id: config.run_id(),
                            config: config.clone(),
                            outcome: RunOutcome::Failed {
                                error: e.to_string(),
                            },
                            prompt: None,
                            selected_doc_ids: Vec::new(),
                            index_key: None,
                            retrieved_hits: Vec::new(),
                            raw_response: None,
                            parsed: None,
                            diagnostics: Vec::new(),
                            started_at_ms: now_ms(),
                            finished_at_ms: now_ms(),
                        });
                if tx.send((idx, run)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        for (idx, run) in rx {
            if let Err(e) = record_run(store, manifest, idx, &run, &mut summary) {
                // Keep the workers from picking up more work.
                queue.lock().unwrap().clear();
                return Err(e);
            }
        }
        Ok(())
    })?;
    summary.remaining = manifest.count(RunStatus::Pending) + manifest.count(RunStatus::Failed);
    Ok(summary)
}

fn record_run(
    store: &ManifestStore,
    manifest: &mut RunManifest,
    idx: usize,
    run: &GenerationRun,
    summary: &mut ExecuteSummary,
) -> Result<(), RunnerError> {
    let entry = &mut manifest.entries[idx];
    store.append_record(
        &entry.artifact,
        &RunRecord::Generation(Box::new(run.clone())),
    )?;
    match &run.outcome {
        RunOutcome::Done => {
            entry.status = RunStatus::Done;
            entry.error = None;
            summary.done += 1;
        }
        RunOutcome::Failed { error } => {
            log::warn!("run {} failed: {error}", entry.run_id);
            entry.status = RunStatus::Failed;
            entry.error = Some(error.clone());
            summary.failed += 1;
        }
    }
    summary.executed += 1;
    store.save(manifest)
}
