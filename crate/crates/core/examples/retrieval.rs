//! Builds a vector index over the sample corpus and retrieves the chunks
//! closest to the rendered prompt.
//!
//! cargo run --example retrieval

use cq_workbench::corpus::{chunk_document, load_corpus, select_corpus, ChunkingPolicy};
use cq_workbench::embed::{HashNgramEmbedder, VectorIndex};
use cq_workbench::prompt::{presets, render_prompt};
use cq_workbench::rag::{assemble_context, build_query_vector};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let manifest = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/corpus.toml");
    let corpus = load_corpus(manifest.as_ref(), None)?;
    let selection = select_corpus(&corpus, 3)?;
    let ids: Vec<&str> = selection
        .documents
        .iter()
        .map(|d| d.doc_id.as_str())
        .collect();
    println!("top-ranked documents: {ids:?}");

    let policy = ChunkingPolicy::new(200, 40)?;
    let mut chunks = Vec::new();
    for doc in &selection.documents {
        chunks.extend(chunk_document(doc, &policy)?);
    }
    let embedder = HashNgramEmbedder::default();
    let index = VectorIndex::build(&embedder, chunks)?;
    println!("indexed {} chunks", index.len());

    let prompt = render_prompt(&presets::human_computer_interaction())?;
    let query = build_query_vector(&prompt, &embedder)?;
    let hits = index.retrieve_top_k(&query, 4)?;
    for hit in &hits {
        println!(
            "{:.4}  {}#{}",
            hit.score, hit.chunk.doc_id, hit.chunk.chunk_index
        );
    }
    println!(
        "\n--- context sent to the model ---\n{}",
        assemble_context(&hits).join("\n\n")
    );
    Ok(())
}
