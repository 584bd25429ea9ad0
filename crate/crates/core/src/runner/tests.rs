use std::fs;
use std::sync::Arc;

use super::*;
use crate::embed::{EmbeddingProvider, HashNgramEmbedder};
use crate::evaluation::{GroundTruthSet, MemoEmbedder};
use crate::llm::FaultyLlm;
use crate::mock;
use crate::prompt::presets;
use crate::rag::{Mode, RagEngine};

fn ground_truth() -> GroundTruthSet {
    GroundTruthSet::new(
        "hci",
        vec![
            "Which research methods are used in usability evaluation?".into(),
            "What threats to validity are reported?".into(),
            "How are stakeholder interviews conducted?".into(),
            "Which empirical validation strategies exist?".into(),
            "What is a systematic mapping study?".into(),
        ],
    )
    .unwrap()
}

fn small_grid() -> ExperimentGrid {
    let mut grid = ExperimentGrid::reference(
        "hci",
        vec![Mode::Rag],
        presets::human_computer_interaction(),
    );
    grid.n_paper_levels = vec![1, 3];
    grid.temperature_levels = vec![0.5, 1.5];
    grid.repetitions = 3;
    grid.seed = 7;
    grid
}

fn providers(engine: &RagEngine) -> ProviderDescriptors {
    ProviderDescriptors {
        retrieval_embedding: engine.retrieval_provider().provider_id(),
        llm: "mock".into(),
        evaluation_embedding: HashNgramEmbedder::default().provider_id(),
    }
}

fn setup(
    dir: &std::path::Path,
    grid: ExperimentGrid,
    engine: &RagEngine,
) -> (ManifestStore, RunManifest) {
    let store = ManifestStore::new(dir);
    let manifest =
        RunManifest::new(grid, &mock::corpus(4), "cq-zero-shot/1", providers(engine)).unwrap();
    store.create(&manifest).unwrap();
    (store, manifest)
}

fn run_all(
    store: &ManifestStore,
    manifest: &mut RunManifest,
    engine: &RagEngine,
) -> ExecuteSummary {
    execute(
        store,
        manifest,
        engine,
        &mock::corpus(4),
        ExecuteOptions::default(),
    )
    .unwrap()
}

#[test]
fn manifest_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let engine = mock::engine(&ground_truth());
    let (store, manifest) = setup(dir.path(), small_grid(), &engine);
    let on_disk = fs::read_to_string(store.manifest_path()).unwrap();
    let loaded = store.load().unwrap();
    assert_eq!(loaded, manifest);
    assert_eq!(loaded.to_json().unwrap(), on_disk);
    assert!(matches!(
        store.create(&manifest),
        Err(RunnerError::ManifestExists(_))
    ));
}

#[test]
fn tampered_manifest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let engine = mock::engine(&ground_truth());
    let (store, mut manifest) = setup(dir.path(), small_grid(), &engine);
    manifest.entries.pop();
    store.save(&manifest).unwrap();
    assert!(matches!(store.load(), Err(RunnerError::ManifestCorrupt(_))));
}

#[test]
fn resume_continues_where_execution_stopped() {
    let dir = tempfile::tempdir().unwrap();
    let gt = ground_truth();
    let engine = mock::engine(&gt);
    let (store, mut manifest) = setup(dir.path(), small_grid(), &engine);
    let corpus = mock::corpus(4);

    let opts = ExecuteOptions {
        max_runs: Some(5),
        ..Default::default()
    };
    let first = execute(&store, &mut manifest, &engine, &corpus, opts).unwrap();
    assert_eq!(first.done, 5);
    assert_eq!(first.remaining, 7);
    let snapshot: Vec<String> = manifest.entries[..5]
        .iter()
        .map(|e| fs::read_to_string(dir.path().join(&e.artifact)).unwrap())
        .collect();

    let mut reloaded = store.load().unwrap();
    let opts = ExecuteOptions {
        resume: true,
        parallel: 3,
        ..Default::default()
    };
    let second = execute(&store, &mut reloaded, &engine, &corpus, opts).unwrap();
    assert_eq!(second.skipped, 5);
    assert_eq!(second.executed, 7);
    assert_eq!(second.remaining, 0);
    for (e, before) in reloaded.entries[..5].iter().zip(&snapshot) {
        assert_eq!(
            &fs::read_to_string(dir.path().join(&e.artifact)).unwrap(),
            before
        );
    }
}

#[test]
fn resume_of_finished_grid_calls_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let llm = Arc::new(mock::synthetic_llm(&ground_truth()));
    let engine = RagEngine::new(Arc::new(HashNgramEmbedder::default()), llm.clone());
    let (store, mut manifest) = setup(dir.path(), small_grid(), &engine);
    run_all(&store, &mut manifest, &engine);
    let calls = llm.calls();
    assert_eq!(calls, 12);
    let opts = ExecuteOptions {
        resume: true,
        ..Default::default()
    };
    let summary = execute(&store, &mut manifest, &engine, &mock::corpus(4), opts).unwrap();
    assert_eq!(summary.executed, 0);
    assert_eq!(summary.skipped, 12);
    assert_eq!(llm.calls(), calls);
}

#[test]
fn injected_fault_fails_one_run_only() {
    let dir = tempfile::tempdir().unwrap();
    let gt = ground_truth();
    let target = small_grid();
    let victim = expand_grid(&target).unwrap()[4].seed;
    let llm = FaultyLlm::new(mock::synthetic_llm(&gt), move |req| {
        req.request_seed == victim
    });
    let engine = RagEngine::new(Arc::new(HashNgramEmbedder::default()), Arc::new(llm));
    let (store, mut manifest) = setup(dir.path(), target, &engine);
    let summary = run_all(&store, &mut manifest, &engine);
    assert_eq!((summary.done, summary.failed), (11, 1));
    assert_eq!(manifest.count(RunStatus::Failed), 1);
    assert!(manifest.entries[4]
        .error
        .as_deref()
        .unwrap()
        .contains("injected"));

    let memo = MemoEmbedder::new(HashNgramEmbedder::default());
    let bundle = report(&store, &manifest, &gt, &memo, 0.6).unwrap();
    assert_eq!(bundle.done_runs, 11);
    assert_eq!(bundle.excluded_runs, 1);
    assert!(bundle
        .runs
        .iter()
        .all(|r| r.run_id != manifest.entries[4].run_id));
}

#[test]
fn report_cells_match_recomputed_means() {
    let dir = tempfile::tempdir().unwrap();
    let gt = ground_truth();
    let engine = mock::engine(&gt);
    let (store, mut manifest) = setup(dir.path(), small_grid(), &engine);
    run_all(&store, &mut manifest, &engine);
    let memo = MemoEmbedder::new(HashNgramEmbedder::default());
    let bundle = report(&store, &manifest, &gt, &memo, 0.6).unwrap();

    assert_eq!(bundle.precision_table.len(), 2);
    for cell in &bundle.precision_table {
        let precisions: Vec<f64> = bundle
            .evaluations
            .iter()
            .filter(|e| cell.run_ids.contains(&e.run_id))
            .map(|e| e.records.iter().filter(|r| r.valid).count() as f64 / e.records.len() as f64)
            .collect();
        assert_eq!(precisions.len(), 6);
        let m = precisions.iter().sum::<f64>() / precisions.len() as f64;
        assert!((m - cell.mean_precision).abs() < 1e-12);
    }
    assert_eq!(bundle.consistency_table.len(), 2);
    assert_eq!(bundle.consistency_table[0].settings.len(), 2);
    assert_eq!(bundle.anova.len(), 2);
}

#[test]
fn zero_shot_grid_gives_single_cell() {
    let dir = tempfile::tempdir().unwrap();
    let gt = ground_truth();
    let engine = mock::engine(&gt);
    let mut grid = ExperimentGrid::reference(
        "hci",
        vec![Mode::ZeroShot],
        presets::human_computer_interaction(),
    );
    grid.temperature_levels = vec![1.0];
    let (store, mut manifest) = setup(dir.path(), grid, &engine);
    run_all(&store, &mut manifest, &engine);
    let memo = MemoEmbedder::new(HashNgramEmbedder::default());
    let bundle = report(&store, &manifest, &gt, &memo, 0.6).unwrap();
    assert_eq!(bundle.precision_table.len(), 1);
    assert_eq!(bundle.precision_table[0].n_runs, 10);
    assert_eq!(bundle.precision_table[0].n_paper, None);
    assert_eq!(bundle.consistency_table.len(), 1);
    assert_eq!(bundle.anova.len(), 1);
    assert!(bundle.anova[0].result.is_none());
    assert!(bundle.anova[0].note.is_some());
}

#[test]
fn report_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let gt = ground_truth();
    let engine = mock::engine(&gt);
    let (store, mut manifest) = setup(dir.path(), small_grid(), &engine);
    run_all(&store, &mut manifest, &engine);
    let memo = MemoEmbedder::new(HashNgramEmbedder::default());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    report(&store, &manifest, &gt, &memo, 0.6)
        .unwrap()
        .write(&out_a)
        .unwrap();
    report(&store, &manifest, &gt, &memo, 0.6)
        .unwrap()
        .write(&out_b)
        .unwrap();
    for name in [
        "report.json",
        "precision_table.csv",
        "consistency.csv",
        "anova.csv",
        "runs.csv",
        "evaluations.jsonl",
    ] {
        assert_eq!(
            fs::read(out_a.join(name)).unwrap(),
            fs::read(out_b.join(name)).unwrap(),
            "{name}"
        );
    }
    assert!(out_a.join("series/std_by_temperature.csv").is_file());
}

#[test]
fn empty_manifest_has_nothing_to_report() {
    let dir = tempfile::tempdir().unwrap();
    let gt = ground_truth();
    let engine = mock::engine(&gt);
    let (store, manifest) = setup(dir.path(), small_grid(), &engine);
    let memo = MemoEmbedder::new(HashNgramEmbedder::default());
    assert!(matches!(
        report(&store, &manifest, &gt, &memo, 0.6),
        Err(RunnerError::NoCompletedRuns)
    ));
}
