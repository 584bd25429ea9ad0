//! Offline stand-ins for the remote providers, used by `--mock`, the examples
//! and the test suites. Everything here is deterministic.

use std::sync::Arc;

use crate::corpus::{ingest_document, SourceDocument, SourceFormat};
use crate::embed::HashNgramEmbedder;
use crate::evaluation::GroundTruthSet;
use crate::llm::SyntheticLlm;
use crate::rag::RagEngine;

/// Plausible-looking questions unrelated to any particular domain.
pub const GENERIC_DISTRACTORS: &[&str] = &[
    "What is the weather forecast for tomorrow?",
    "How many legs does a spider have?",
    "Which city hosted the first modern Olympic games?",
    "What is the boiling point of water at sea level?",
    "Who painted the ceiling of the Sistine Chapel?",
    "How long does it take light to reach Earth from the Sun?",
    "What ingredients are needed for a sourdough starter?",
    "Which planet has the most moons?",
    "How do bees communicate the location of flowers?",
    "What is the tallest mountain in Africa?",
    "How is cheese aged in traditional caves?",
    "Which instrument has eighty-eight keys?",
    "What causes the tides in the ocean?",
    "How many bones are in the adult human body?",
    "Which metal is liquid at room temperature?",
    "What do pandas mostly eat?",
    "How fast can a cheetah run?",
    "Which language has the most native speakers?",
    "What is the chemical symbol for gold?",
    "How are volcanic islands formed?",
];

pub fn distractors() -> Vec<String> {
    GENERIC_DISTRACTORS.iter().map(|s| s.to_string()).collect()
}

/// A synthetic model that answers with ground-truth questions, rephrased, or
/// with generic distractors.
pub fn synthetic_llm(ground_truth: &GroundTruthSet) -> SyntheticLlm {
    SyntheticLlm::new(ground_truth.cqs.clone(), distractors())
}

/// Engine wired to the hash embedder and a synthetic model.
pub fn engine(ground_truth: &GroundTruthSet) -> RagEngine {
    RagEngine::new(
        Arc::new(HashNgramEmbedder::default()),
        Arc::new(synthetic_llm(ground_truth)),
    )
}

const TOPICS: &[&str] = &[
    "requirements elicitation",
    "empirical validation",
    "stakeholder interviews",
    "systematic mapping",
    "replication studies",
    "usability evaluation",
    "research methods",
    "theory building",
    "industrial case studies",
    "experiment design",
    "survey instruments",
    "threats to validity",
];

/// `n` documents of a few thousand characters each, ranked 1..=n.
pub fn corpus(n: usize) -> Vec<SourceDocument> {
    (0..n)
        .map(|i| {
            let mut text = String::new();
            for j in 0..24 {
                let a = TOPICS[(i * 5 + j) % TOPICS.len()];
                let b = TOPICS[(i + j * 7 + 3) % TOPICS.len()];
                text.push_str(&format!(
                    "Document {i} discusses {a} and its relation to {b}. Section {j} reports findings on {a}.\n"
                ));
            }
            ingest_document(text.as_str(), SourceFormat::PlainText, &format!("paper-{:02}", i + 1), i as u32 + 1)
                .expect("generated text is never empty")
        })
        .collect()
}
