//! Scores generated questions against a ground-truth set by embedding
//! similarity, then sweeps the validity threshold.
//!
//! cargo run --example evaluate_precision

use cq_workbench::embed::HashNgramEmbedder;
use cq_workbench::evaluation::{
    evaluate_run, EvalReport, GroundTruthSet, MatchRecord, MemoEmbedder,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Hand-scored records: each generated question already has its best cosine.
    let table: Vec<MatchRecord> = [
        ("Which elicitation techniques were evaluated?", 0.7393),
        ("What year was the journal founded?", 0.3467),
        ("Which validation methods are reported?", 0.8245),
        ("How long is the average abstract?", 0.4718),
    ]
    .into_iter()
    .map(|(cq, cos)| MatchRecord {
        cq_gen: cq.into(),
        best_cq_gt: "(ground truth)".into(),
        best_cosine: cos,
        valid: false,
    })
    .collect();
    let report = EvalReport::from_records("hand-scored", table, 0.6)?;
    println!(
        "hand-scored: TP={} FP={} precision={}",
        report.tp, report.fp, report.precision
    );

    let gt = GroundTruthSet::parse_text("hci", include_str!("data/ground_truth.txt"))?;
    let generated: Vec<String> = [
        "What is an interaction between a user and a system?",
        "Which input devices are used for user actions?",
        "What is a usability evaluation method?",
        "How many legs does a spider have?",
        "Which city hosted the first modern Olympic games?",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();

    let embedder = MemoEmbedder::new(HashNgramEmbedder::new(512, 3));
    let report = evaluate_run("example", &generated, &gt, &embedder, 0.6)?;
    println!(
        "\n{:<55} {:>7}  best ground-truth match",
        "generated", "cosine"
    );
    for r in &report.records {
        let mark = if r.valid { "+" } else { " " };
        println!(
            "{mark} {:<53} {:>7.4}  {}",
            r.cq_gen, r.best_cosine, r.best_cq_gt
        );
    }
    println!("precision at 0.6: {:.3}", report.precision);

    println!("\nthreshold sweep (no re-embedding):");
    for theta in [0.3, 0.4, 0.5, 0.6, 0.7, 0.8] {
        println!(
            "  theta={theta:.1}  precision={:.3}",
            report.with_theta(theta)?.precision
        );
    }
    println!(
        "embedding calls that missed the cache: {}",
        embedder.misses()
    );
    Ok(())
}
