//! One retrieval-augmented generation against an OpenAI-compatible endpoint.
//!
//! CQWB_LIVE_ENDPOINT=https://api.openai.com/v1 CQWB_API_KEY=... \
//!     cargo run --example live_generation
//!
//! Without `CQWB_LIVE_ENDPOINT` the example explains itself and exits.

use std::sync::Arc;

use cq_workbench::corpus::load_corpus;
use cq_workbench::embed::HashNgramEmbedder;
use cq_workbench::llm::{RemoteLlm, RemoteLlmConfig};
use cq_workbench::prompt::presets;
use cq_workbench::rag::{RagEngine, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let Ok(endpoint) = std::env::var("CQWB_LIVE_ENDPOINT") else {
        println!("set CQWB_LIVE_ENDPOINT (and CQWB_API_KEY) to run against a live model");
        return Ok(());
    };
    let model = std::env::var("CQWB_LIVE_MODEL").unwrap_or_else(|_| "gpt-4o".into());
    let llm: RemoteLlmConfig = serde_json::from_value(serde_json::json!({ "endpoint": endpoint }))?;
    let engine = RagEngine::new(
        Arc::new(HashNgramEmbedder::default()),
        Arc::new(RemoteLlm::new(llm)),
    );

    let corpus = load_corpus(
        concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/corpus.toml").as_ref(),
        None,
    )?;
    let mut config = RunConfig::rag(presets::human_computer_interaction(), 2, 1.0);
    config.model = model;
    let run = engine.run_generation(&config, &corpus)?;
    println!("{:?}", run.outcome);
    for cq in run.cqs() {
        println!("{cq}");
    }
    for d in &run.diagnostics {
        println!("note: {d:?}");
    }
    Ok(())
}
