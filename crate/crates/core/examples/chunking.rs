//! Splits a document into overlapping chunks and reassembles it.
//!
//! cargo run --example chunking

use cq_workbench::corpus::{
    chunk_document, ingest_document, reassemble, BoundaryMode, ChunkingPolicy, SourceFormat,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let raw = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/data/docs/usability.txt"
    ))?;
    let doc = ingest_document(raw.as_str(), SourceFormat::PlainText, "usability", 1)?;
    println!("{} chars", doc.char_count);

    for mode in [BoundaryMode::HardCut, BoundaryMode::SentenceSnap] {
        let policy = ChunkingPolicy::new(160, 40)?.with_boundary_mode(mode);
        let chunks = chunk_document(&doc, &policy)?;
        println!("\n{mode:?}: {} chunks", chunks.len());
        for c in &chunks {
            println!(
                "  #{:<2} [{:>3}, {:>3})  {:?}",
                c.chunk_index,
                c.span_start,
                c.span_end,
                preview(&c.text)
            );
        }
        assert_eq!(reassemble(&chunks), doc.text);
    }
    println!("\nboth chunkings reassemble to the original text");
    Ok(())
}

fn preview(s: &str) -> String {
    let head: String = s.chars().take(48).collect();
    if s.chars().count() > 48 {
        format!("{head}...")
    } else {
        head
    }
}
