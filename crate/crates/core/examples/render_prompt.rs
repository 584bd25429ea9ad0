//! Renders the zero-shot prompt for both built-in presets and for a custom
//! domain loaded from TOML.
//!
//! cargo run --example render_prompt

use cq_workbench::prompt::{presets, render_prompt, PromptTemplate, PromptVariables};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (name, vars) in [
        (
            "requirements engineering",
            presets::requirements_engineering(),
        ),
        (
            "human-computer interaction",
            presets::human_computer_interaction(),
        ),
    ] {
        let rendered = render_prompt(&vars)?;
        println!(
            "== {name} ({}) ==\n{}\n",
            rendered.template_version, rendered.text
        );
    }

    let custom = PromptVariables::from_toml(
        r#"
domain_name = "Food Safety"
ontology_purpose = "describe hazards, controls and inspections along the food supply chain"
n_cqs = 20
artifact_kind = "knowledge_graph"
"#,
    )?;
    println!("== custom ==\n{}\n", render_prompt(&custom)?.text);

    // Templates are plain text with {{var}} placeholders.
    let short = PromptTemplate::parse(
        "short/1",
        "List {{n_cqs}} questions an ontology about {{domain_name}} should answer. \
         Purpose: {{ontology_purpose}}. Definition: {{cq_definition}}.",
    )?;
    println!("== short ==\n{}", short.render(&custom)?.text);
    Ok(())
}
