//! Runs a full experiment grid against the offline synthetic model, stops it
//! halfway, resumes it, and writes the report bundle.
//!
//! cargo run --example grid_experiment [out_dir]

use std::path::PathBuf;

use cq_workbench::config::WorkbenchConfig;
use cq_workbench::evaluation::MemoEmbedder;
use cq_workbench::prompt::DEFAULT_TEMPLATE_VERSION;
use cq_workbench::runner::{
    execute, report, ExecuteOptions, ManifestStore, ProviderDescriptors, RunManifest,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config_path = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/cqwb.toml");
    let cfg = WorkbenchConfig::load(config_path.as_ref())?;
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("cqwb-grid-example"));
    if out.exists() {
        std::fs::remove_dir_all(&out)?;
    }

    let gt = cfg.ground_truth()?;
    let corpus = cfg.corpus()?;
    let engine = cfg.engine(&gt)?;
    let grid = cfg.grid()?;
    println!("{} runs over {} documents", grid.run_count(), corpus.len());

    let providers = ProviderDescriptors {
        retrieval_embedding: engine.retrieval_provider().provider_id(),
        llm: cfg.llm(&gt)?.provider_id(),
        evaluation_embedding: cfg.evaluation_embedder().provider_id(),
    };
    let store = ManifestStore::new(&out);
    let mut manifest = RunManifest::new(grid, &corpus, DEFAULT_TEMPLATE_VERSION, providers)?;
    store.create(&manifest)?;

    let half = manifest.entries.len() / 2;
    let first = execute(
        &store,
        &mut manifest,
        &engine,
        &corpus,
        ExecuteOptions {
            max_runs: Some(half),
            ..Default::default()
        },
    )?;
    println!("first pass: {first:?}");

    // A fresh process would do exactly this: reload and resume.
    let mut manifest = store.load()?;
    let second = execute(
        &store,
        &mut manifest,
        &engine,
        &corpus,
        ExecuteOptions {
            resume: true,
            parallel: 4,
            max_runs: None,
        },
    )?;
    println!("resumed:    {second:?}");

    let embedder = MemoEmbedder::new(cfg.evaluation_embedder());
    let bundle = report(&store, &manifest, &gt, &embedder, cfg.evaluation.theta)?;
    bundle.write(&out.join("report"))?;

    println!("\nmean precision:");
    for cell in &bundle.precision_table {
        let n = cell.n_paper.map_or("-".into(), |n| n.to_string());
        println!(
            "  {:<9} n_paper={n:<2}  {:.3}  ({} runs)",
            cell.mode, cell.mean_precision, cell.n_runs
        );
    }
    println!("consistency by temperature:");
    for row in &bundle.consistency_table {
        println!(
            "  t={:<4} std(precision)={:.4}  std(cosine)={:.4}",
            row.temperature, row.std_precision, row.std_cosine
        );
    }
    for a in &bundle.anova {
        if let Some(r) = &a.result {
            println!(
                "anova {}: F={:.3} p={:.4}",
                a.factor, r.f_statistic, r.p_value
            );
        }
    }
    println!("\nbundle written to {}", out.join("report").display());
    Ok(())
}
