//! Turns a messy model response into a clean question list, and shows the
//! deterministic synthetic model used for offline runs.
//!
//! cargo run --example parse_cqs

use cq_workbench::evaluation::GroundTruthSet;
use cq_workbench::llm::{complete, parse_cqs, ChatRequest, OverflowPolicy, RetryPolicy};
use cq_workbench::mock;
use cq_workbench::prompt::{presets, render_prompt};

const RESPONSE: &str = "Sure! Here are the competency questions you asked for:

1. What is an interaction?
2) Who takes part in an interaction?
**3.** Which devices capture user actions?
- What is usability?
Q5: what is usability?
6. Interfaces are made of elements.

Let me know if you need more.";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let parsed = parse_cqs(RESPONSE, 6)?;
    for (i, cq) in parsed.cqs.iter().enumerate() {
        println!("{:>2}. {cq}", i + 1);
    }
    println!("\ndiagnostics:");
    for d in &parsed.diagnostics {
        println!("  {d:?}");
    }

    let gt = GroundTruthSet::parse_text("hci", include_str!("data/ground_truth.txt"))?;
    let llm = mock::synthetic_llm(&gt);
    let prompt = render_prompt(&presets::human_computer_interaction())?;
    let mut request = ChatRequest::new("gpt-4o", 1.0, &prompt.text);
    request.request_seed = Some(7);
    let a = complete(
        &llm,
        &request,
        &RetryPolicy::default(),
        OverflowPolicy::Error,
    )?;
    let b = complete(
        &llm,
        &request,
        &RetryPolicy::default(),
        OverflowPolicy::Error,
    )?;
    assert_eq!(a.raw_text, b.raw_text);
    println!(
        "\nsynthetic response (identical on every call):\n{}",
        a.raw_text
    );
    Ok(())
}
