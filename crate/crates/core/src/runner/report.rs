//! Aggregation of a finished grid into precision, consistency and ANOVA tables.
//!
//! Every number in a [`ReportBundle`] is derived from run records alone, so
//! rerunning the report over the same manifest yields byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingProvider;
use crate::evaluation::{consistency, evaluate_run, ConsistencyReport, EvalReport, GroundTruthSet};
use crate::rag::{GenerationRun, Mode};
use crate::stats::{mean, one_way_anova, sample_std, AnovaResult, FactorGroups};

use super::manifest::{ManifestStore, RunManifest, RunStatus};
use super::RunnerError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub run_id: String,
    pub mode: Mode,
    pub n_paper: Option<usize>,
    pub temperature: f64,
    pub repetition: usize,
    pub n_cqs: usize,
    pub tp: usize,
    pub fp: usize,
    pub precision: f64,
}

/// Mean precision of one (mode, n_paper) cell, pooled over temperatures and
/// repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionCell {
    pub mode: Mode,
    pub n_paper: Option<usize>,
    pub mean_precision: f64,
    /// Sample standard deviation; absent for a single run.
    pub std_precision: Option<f64>,
    pub n_runs: usize,
    pub run_ids: Vec<String>,
}

/// Consistency at one temperature: the per-setting standard deviations,
/// averaged over every setting that shares the temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub temperature: f64,
    pub std_precision: f64,
    pub std_cosine: f64,
    pub settings: Vec<ConsistencyReport>,
    pub run_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaEntry {
    pub factor: String,
    pub result: Option<AnovaResult>,
    /// Why the test could not be run, when `result` is absent.
    pub note: Option<String>,
    pub run_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub task_id: String,
    pub theta: f64,
    pub corpus_hash: String,
    pub template_version: String,
    pub done_runs: usize,
    /// Failed or never-run entries, excluded from every aggregate.
    pub excluded_runs: usize,
    pub runs: Vec<RunScore>,
    pub precision_table: Vec<PrecisionCell>,
    pub consistency_table: Vec<ConsistencyRow>,
    pub anova: Vec<AnovaEntry>,
    #[serde(skip)]
    pub evaluations: Vec<EvalReport>,
}

type Scored = (GenerationRun, EvalReport);

/// Ordered map key for a temperature level.
fn temp_key(t: f64) -> (u64, String) {
    // Levels are in [0, 2]; bit order matches numeric order for non-negative floats.
    (t.to_bits(), format!("{t}"))
}

/// Evaluates every finished run and aggregates the grid.
pub fn report<P: EmbeddingProvider + ?Sized>(
    store: &ManifestStore,
    manifest: &RunManifest,
    ground_truth: &GroundTruthSet,
    evaluator: &P,
    theta: f64,
) -> Result<ReportBundle, RunnerError> {
    let mut runs: Vec<(GenerationRun, EvalReport)> = Vec::new();
    for entry in manifest
        .entries
        .iter()
        .filter(|e| e.status == RunStatus::Done)
    {
        let run = store.latest_generation(&entry.artifact)?;
        if !run.is_done() || run.run_id != entry.run_id {
            return Err(RunnerError::ManifestCorrupt(format!(
                "run record {} does not match manifest entry {}",
                run.run_id, entry.run_id
            )));
        }
        let eval = evaluate_run(&run.run_id, run.cqs(), ground_truth, evaluator, theta)?;
        runs.push((run, eval));
    }
    if runs.is_empty() {
        return Err(RunnerError::NoCompletedRuns);
    }

    let scores: Vec<RunScore> = runs
        .iter()
        .map(|(run, eval)| RunScore {
            run_id: run.run_id.clone(),
            mode: run.config.mode,
            n_paper: run.config.n_paper,
            temperature: run.config.temperature,
            repetition: run.config.repetition_index,
            n_cqs: eval.records.len(),
            tp: eval.tp,
            fp: eval.fp,
            precision: eval.precision,
        })
        .collect();

    let precision_table = precision_table(&scores);
    let consistency_table = consistency_table(&runs, evaluator)?;
    let anova = anova_entries(&scores);

    Ok(ReportBundle {
        task_id: manifest.grid.task_id.clone(),
        theta,
        corpus_hash: manifest.corpus_hash.clone(),
        template_version: manifest.template_version.clone(),
        done_runs: runs.len(),
        excluded_runs: manifest.entries.len() - runs.len(),
        runs: scores,
        precision_table,
        consistency_table,
        anova,
        evaluations: runs.into_iter().map(|(_, e)| e).collect(),
    })
}

fn precision_table(scores: &[RunScore]) -> Vec<PrecisionCell> {
    let mut cells: BTreeMap<(Mode, Option<usize>), Vec<&RunScore>> = BTreeMap::new();
    for s in scores {
        cells.entry((s.mode, s.n_paper)).or_default().push(s);
    }
    cells
        .into_iter()
        .map(|((mode, n_paper), members)| {
            let values: Vec<f64> = members.iter().map(|s| s.precision).collect();
            PrecisionCell {
                mode,
                n_paper,
                mean_precision: mean(&values).unwrap(),
                std_precision: sample_std(&values).ok(),
                n_runs: values.len(),
                run_ids: members.iter().map(|s| s.run_id.clone()).collect(),
            }
        })
        .collect()
}

fn consistency_table<P: EmbeddingProvider + ?Sized>(
    runs: &[(GenerationRun, EvalReport)],
    evaluator: &P,
) -> Result<Vec<ConsistencyRow>, RunnerError> {
    let mut settings: BTreeMap<((u64, String), String), Vec<&Scored>> = BTreeMap::new();
    for pair in runs {
        let cfg = &pair.0.config;
        settings
            .entry((temp_key(cfg.temperature), cfg.setting_key()))
            .or_default()
            .push(pair);
    }
    let mut rows: BTreeMap<(u64, String), ConsistencyRow> = BTreeMap::new();
    for ((tk, key), members) in settings {
        if members.len() < 2 {
            continue;
        }
        let reports: Vec<EvalReport> = members.iter().map(|(_, e)| e.clone()).collect();
        let texts: Vec<String> = members.iter().map(|(r, _)| r.cqs().join("\n")).collect();
        let report = consistency(&key, &reports, &texts, evaluator)?;
        let temperature = members[0].0.config.temperature;
        let row = rows.entry(tk).or_insert_with(|| ConsistencyRow {
            temperature,
            std_precision: 0.0,
            std_cosine: 0.0,
            settings: Vec::new(),
            run_ids: Vec::new(),
        });
        row.settings.push(report);
        row.run_ids
            .extend(members.iter().map(|(r, _)| r.run_id.clone()));
    }
    Ok(rows
        .into_values()
        .map(|mut row| {
            let sp: Vec<f64> = row.settings.iter().map(|s| s.std_precision).collect();
            let sc: Vec<f64> = row.settings.iter().map(|s| s.std_cosine).collect();
            row.std_precision = mean(&sp).unwrap();
            row.std_cosine = mean(&sc).unwrap();
            row
        })
        .collect())
}

fn anova_entry(factor: &str, members: Vec<(String, &RunScore)>) -> AnovaEntry {
    let mut groups = FactorGroups::new(factor);
    for (level, s) in &members {
        groups.push(level.clone(), s.precision);
    }
    let run_ids = members.iter().map(|(_, s)| s.run_id.clone()).collect();
    match one_way_anova(&groups) {
        Ok(result) => AnovaEntry {
            factor: factor.into(),
            result: Some(result),
            note: None,
            run_ids,
        },
        Err(e) => AnovaEntry {
            factor: factor.into(),
            result: None,
            note: Some(e.to_string()),
            run_ids,
        },
    }
}

/// One-way tests on per-run precision: `n_paper` over retrieval-augmented
/// runs (pooling temperatures) and `temperature` over all runs (pooling the
/// other factors).
fn anova_entries(scores: &[RunScore]) -> Vec<AnovaEntry> {
    let by_paper: Vec<(String, &RunScore)> = scores
        .iter()
        .filter(|s| s.mode == Mode::Rag)
        .filter_map(|s| s.n_paper.map(|n| (n.to_string(), s)))
        .collect();
    let by_temp: Vec<(String, &RunScore)> = scores
        .iter()
        .map(|s| (format!("{}", s.temperature), s))
        .collect();
    let mut out = Vec::new();
    if !by_paper.is_empty() {
        out.push(anova_entry("n_paper", by_paper));
    }
    out.push(anova_entry("temperature", by_temp));
    out
}

#[derive(Serialize)]
struct PrecisionCsv {
    mode: String,
    n_paper: Option<usize>,
    mean_precision: f64,
    std_precision: Option<f64>,
    n_runs: usize,
}

#[derive(Serialize)]
struct ConsistencyCsv {
    temperature: f64,
    std_precision: f64,
    std_cosine: f64,
    n_settings: usize,
    n_runs: usize,
}

#[derive(Serialize)]
struct AnovaCsv {
    factor: String,
    f_statistic: Option<f64>,
    p_value: Option<f64>,
    df_between: Option<usize>,
    df_within: Option<usize>,
    note: Option<String>,
}

#[derive(Serialize)]
struct RunCsv {
    run_id: String,
    mode: String,
    n_paper: Option<usize>,
    temperature: f64,
    repetition: usize,
    n_cqs: usize,
    tp: usize,
    fp: usize,
    precision: f64,
}

fn write_csv<T: Serialize>(
    path: &Path,
    rows: impl IntoIterator<Item = T>,
) -> Result<(), RunnerError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

impl ReportBundle {
    /// Writes the bundle as JSON, CSV tables and plot-ready series:
    ///
    /// ```text
    /// report.json  runs.csv  precision_table.csv  consistency.csv  anova.csv
    /// evaluations.jsonl  series/precision_by_n_paper.csv  series/std_by_temperature.csv
    /// ```
    pub fn write(&self, dir: &Path) -> Result<(), RunnerError> {
        fs::create_dir_all(dir.join("series"))?;
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        fs::write(dir.join("report.json"), json)?;

        let mut evals = String::new();
        for e in &self.evaluations {
            evals.push_str(&serde_json::to_string(e)?);
            evals.push('\n');
        }
        fs::write(dir.join("evaluations.jsonl"), evals)?;

        write_csv(
            &dir.join("runs.csv"),
            self.runs.iter().map(|r| RunCsv {
                run_id: r.run_id.clone(),
                mode: r.mode.to_string(),
                n_paper: r.n_paper,
                temperature: r.temperature,
                repetition: r.repetition,
                n_cqs: r.n_cqs,
                tp: r.tp,
                fp: r.fp,
                precision: r.precision,
            }),
        )?;
        let precision_rows = || {
            self.precision_table.iter().map(|c| PrecisionCsv {
                mode: c.mode.to_string(),
                n_paper: c.n_paper,
                mean_precision: c.mean_precision,
                std_precision: c.std_precision,
                n_runs: c.n_runs,
            })
        };
        write_csv(&dir.join("precision_table.csv"), precision_rows())?;
        write_csv(
            &dir.join("series/precision_by_n_paper.csv"),
            precision_rows().filter(|r| r.n_paper.is_some() || r.mode == "zero_shot"),
        )?;
        let consistency_rows = || {
            self.consistency_table.iter().map(|r| ConsistencyCsv {
                temperature: r.temperature,
                std_precision: r.std_precision,
                std_cosine: r.std_cosine,
                n_settings: r.settings.len(),
                n_runs: r.run_ids.len(),
            })
        };
        write_csv(&dir.join("consistency.csv"), consistency_rows())?;
        write_csv(
            &dir.join("series/std_by_temperature.csv"),
            consistency_rows(),
        )?;
        write_csv(
            &dir.join("anova.csv"),
            self.anova.iter().map(|a| AnovaCsv {
                factor: a.factor.clone(),
                f_statistic: a.result.as_ref().map(|r| r.f_statistic),
                p_value: a.result.as_ref().map(|r| r.p_value),
                df_between: a.result.as_ref().map(|r| r.df_between),
                df_within: a.result.as_ref().map(|r| r.df_within),
                note: a.note.clone(),
            }),
        )?;
        Ok(())
    }
}
