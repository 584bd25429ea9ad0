//! Zero-shot prompt template for competency question generation.
//!
//! The built-in template has five lines: the expert role, the purpose of the
//! ontology, the definition of a competency question, the derivation
//! instruction carrying the requested count, and the output-format
//! instruction. Placeholders use `{{name}}` syntax.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("missing or blank prompt variable `{0}`")]
    MissingVariable(&'static str),
    #[error("number of competency questions must be at least 1")]
    InvalidCount,
    #[error("template does not declare placeholder `{{{{{0}}}}}`")]
    UndeclaredVariable(&'static str),
    #[error("template uses unknown placeholder `{0}`")]
    UnknownPlaceholder(String),
    #[error("unterminated placeholder in template")]
    Unterminated,
    #[error("invalid preset: {0}")]
    InvalidPreset(String),
}

pub const DEFAULT_TEMPLATE_VERSION: &str = "cq-zero-shot/1";

pub const DEFAULT_TEMPLATE: &str = "You are an expert in {{domain_name}}.
Your purpose is to {{ontology_purpose}}.
A competency question is {{cq_definition}}.
Derive {{n_cqs}} competency questions for the above-mentioned {{artifact}}, using the provided documents.
Return ONLY the competency questions, no other text.";

pub const OUTPUT_FORMAT_INSTRUCTION: &str = "Return ONLY the competency questions, no other text.";

const CQ_DEFINITION: &str = "a natural language question that specifies the requirements of an ontology and can be answered by that ontology";

/// The informal definition of a competency question used in every preset.
pub fn default_cq_definition() -> &'static str {
    CQ_DEFINITION
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    /// Rendered as "ontology (or knowledge graph)".
    #[default]
    Ontology,
    KnowledgeGraph,
}

impl ArtifactKind {
    pub fn phrase(self) -> &'static str {
        match self {
            ArtifactKind::Ontology => "ontology (or knowledge graph)",
            ArtifactKind::KnowledgeGraph => "knowledge graph",
        }
    }
}

fn default_definition_string() -> String {
    CQ_DEFINITION.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptVariables {
    pub domain_name: String,
    pub ontology_purpose: String,
    #[serde(default = "default_definition_string")]
    pub cq_definition: String,
    pub n_cqs: u32,
    #[serde(default)]
    pub artifact_kind: ArtifactKind,
}

impl PromptVariables {
    pub fn new(domain_name: &str, ontology_purpose: &str, n_cqs: u32) -> Self {
        Self {
            domain_name: domain_name.into(),
            ontology_purpose: ontology_purpose.into(),
            cq_definition: default_definition_string(),
            n_cqs,
            artifact_kind: ArtifactKind::default(),
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.domain_name.trim().is_empty() {
            return Err(PromptError::MissingVariable("domain_name"));
        }
        if self.ontology_purpose.trim().is_empty() {
            return Err(PromptError::MissingVariable("ontology_purpose"));
        }
        if self.cq_definition.trim().is_empty() {
            return Err(PromptError::MissingVariable("cq_definition"));
        }
        if self.n_cqs == 0 {
            return Err(PromptError::InvalidCount);
        }
        Ok(())
    }

    /// Parses a preset file (TOML, one key per variable).
    pub fn from_toml(text: &str) -> Result<Self, PromptError> {
        let vars: Self =
            toml::from_str(text).map_err(|e| PromptError::InvalidPreset(e.to_string()))?;
        vars.validate()?;
        Ok(vars)
    }
}

/// Built-in presets for the two reference tasks.
pub mod presets {
    use super::PromptVariables;

    pub const REQUIREMENTS_ENGINEERING: &str =
        include_str!("../presets/requirements_engineering.toml");
    pub const HUMAN_COMPUTER_INTERACTION: &str =
        include_str!("../presets/human_computer_interaction.toml");

    pub fn requirements_engineering() -> PromptVariables {
        PromptVariables::from_toml(REQUIREMENTS_ENGINEERING).expect("bundled preset is valid")
    }

    pub fn human_computer_interaction() -> PromptVariables {
        PromptVariables::from_toml(HUMAN_COMPUTER_INTERACTION).expect("bundled preset is valid")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub variables: PromptVariables,
    pub template_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Var(Placeholder),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Placeholder {
    DomainName,
    OntologyPurpose,
    CqDefinition,
    NCqs,
    Artifact,
}

impl Placeholder {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "domain_name" => Placeholder::DomainName,
            "ontology_purpose" => Placeholder::OntologyPurpose,
            "cq_definition" => Placeholder::CqDefinition,
            "n_cqs" => Placeholder::NCqs,
            "artifact" => Placeholder::Artifact,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Placeholder::DomainName => "domain_name",
            Placeholder::OntologyPurpose => "ontology_purpose",
            Placeholder::CqDefinition => "cq_definition",
            Placeholder::NCqs => "n_cqs",
            Placeholder::Artifact => "artifact",
        }
    }
}

const REQUIRED: [Placeholder; 4] = [
    Placeholder::DomainName,
    Placeholder::OntologyPurpose,
    Placeholder::CqDefinition,
    Placeholder::NCqs,
];

/// A parsed, versioned template. Custom templates must use all four variables;
/// `{{artifact}}` is optional.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    version: String,
    segments: Vec<Segment>,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATE_VERSION, DEFAULT_TEMPLATE).expect("built-in template parses")
    }
}

impl PromptTemplate {
    pub fn parse(version: &str, source: &str) -> Result<Self, PromptError> {
        let mut segments = Vec::new();
        let mut rest = source;
        while let Some(open) = rest.find("{{") {
            if open > 0 {
                segments.push(Segment::Literal(rest[..open].to_string()));
            }
            let after = &rest[open + 2..];
            let close = after.find("}}").ok_or(PromptError::Unterminated)?;
            let name = after[..close].trim();
            let placeholder = Placeholder::parse(name)
                .ok_or_else(|| PromptError::UnknownPlaceholder(name.to_string()))?;
            segments.push(Segment::Var(placeholder));
            rest = &after[close + 2..];
        }
        if rest.contains("}}") {
            return Err(PromptError::Unterminated);
        }
        if !rest.is_empty() {
            segments.push(Segment::Literal(rest.to_string()));
        }
        for required in REQUIRED {
            if !segments.contains(&Segment::Var(required)) {
                return Err(PromptError::UndeclaredVariable(required.name()));
            }
        }
        Ok(Self {
            version: version.to_string(),
            segments,
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn render(&self, vars: &PromptVariables) -> Result<RenderedPrompt, PromptError> {
        vars.validate()?;
        let mut text = String::new();
        for segment in &self.segments {
            match segment {
                Segment::Literal(s) => text.push_str(s),
                Segment::Var(Placeholder::DomainName) => text.push_str(&vars.domain_name),
                Segment::Var(Placeholder::OntologyPurpose) => text.push_str(&vars.ontology_purpose),
                Segment::Var(Placeholder::CqDefinition) => text.push_str(&vars.cq_definition),
                Segment::Var(Placeholder::NCqs) => text.push_str(&vars.n_cqs.to_string()),
                Segment::Var(Placeholder::Artifact) => text.push_str(vars.artifact_kind.phrase()),
            }
        }
        Ok(RenderedPrompt {
            text,
            variables: vars.clone(),
            template_version: self.version.clone(),
        })
    }
}

/// Renders `vars` with the built-in template.
pub fn render_prompt(vars: &PromptVariables) -> Result<RenderedPrompt, PromptError> {
    PromptTemplate::default().render(vars)
}

/// Collapses every whitespace run to one space within each line and drops
/// blank lines.
pub fn normalize_whitespace(text: &str) -> String {
    text.lines()
        .map(|l| l.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn re_preset_derivation_line() {
        let p = render_prompt(&presets::requirements_engineering()).unwrap();
        let lines: Vec<&str> = p.text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "You are an expert in Requirements Engineering.");
        assert!(lines[3].starts_with("Derive 77 competency questions"));
        assert_eq!(lines[4], OUTPUT_FORMAT_INSTRUCTION);
        assert_eq!(p.template_version, DEFAULT_TEMPLATE_VERSION);
    }

    #[test]
    fn hci_preset_derivation_line() {
        let p = render_prompt(&presets::human_computer_interaction()).unwrap();
        assert!(p
            .text
            .lines()
            .nth(3)
            .unwrap()
            .starts_with("Derive 15 competency questions"));
    }

    #[test]
    fn zero_count_rejected() {
        let mut v = presets::human_computer_interaction();
        v.n_cqs = 0;
        assert_eq!(render_prompt(&v).unwrap_err(), PromptError::InvalidCount);
    }

    #[test]
    fn blank_variable_rejected() {
        let mut v = presets::human_computer_interaction();
        v.domain_name = "  ".into();
        assert_eq!(
            render_prompt(&v).unwrap_err(),
            PromptError::MissingVariable("domain_name")
        );
    }

    #[test]
    fn definition_appears_once() {
        assert_eq!(
            default_cq_definition(),
            "a natural language question that specifies the requirements of an ontology and can be answered by that ontology"
        );
        let p = render_prompt(&presets::requirements_engineering()).unwrap();
        assert_eq!(p.text.matches(default_cq_definition()).count(), 1);
    }

    #[test]
    fn artifact_kind_phrasing() {
        let mut v = PromptVariables::new("Biology", "model cells", 3);
        let onto = render_prompt(&v).unwrap();
        assert!(onto
            .text
            .contains("above-mentioned ontology (or knowledge graph), using"));
        v.artifact_kind = ArtifactKind::KnowledgeGraph;
        let kg = render_prompt(&v).unwrap();
        assert!(kg.text.contains("above-mentioned knowledge graph, using"));
    }

    #[test]
    fn no_unresolved_placeholders() {
        let p = render_prompt(&PromptVariables::new("A", "b", 2)).unwrap();
        assert!(!p.text.contains("{{") && !p.text.contains("}}"));
    }

    #[test]
    fn custom_template_must_declare_variables() {
        let missing =
            "You know {{domain_name}}. Make {{n_cqs}} questions about {{ontology_purpose}}.";
        assert_eq!(
            PromptTemplate::parse("x", missing).unwrap_err(),
            PromptError::UndeclaredVariable("cq_definition")
        );
        assert!(matches!(
            PromptTemplate::parse("x", "{{domain_name}} {{bogus}}"),
            Err(PromptError::UnknownPlaceholder(_))
        ));
        assert_eq!(
            PromptTemplate::parse("x", "{{domain_name").unwrap_err(),
            PromptError::Unterminated
        );
        let ok = PromptTemplate::parse(
            "custom/1",
            "{{domain_name}}|{{ontology_purpose}}|{{cq_definition}}|{{n_cqs}}",
        )
        .unwrap();
        let r = ok.render(&PromptVariables::new("D", "P", 4)).unwrap();
        assert_eq!(r.text, format!("D|P|{}|4", default_cq_definition()));
        assert_eq!(r.template_version, "custom/1");
    }

    #[test]
    fn rerender_snapshot_is_identical() {
        let p = render_prompt(&presets::requirements_engineering()).unwrap();
        assert_eq!(render_prompt(&p.variables).unwrap(), p);
    }

    #[test]
    fn preset_defaults_definition() {
        let v =
            PromptVariables::from_toml("domain_name = \"X\"\nontology_purpose = \"y\"\nn_cqs = 2")
                .unwrap();
        assert_eq!(v.cq_definition, default_cq_definition());
        assert_eq!(v.artifact_kind, ArtifactKind::Ontology);
        assert!(PromptVariables::from_toml(
            "domain_name = \"X\"\nontology_purpose = \"y\"\nn_cqs = 0"
        )
        .is_err());
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn render_injective_on_count(a in 1u32..10_000, b in 1u32..10_000) {
            prop_assume!(a != b);
            let mut v = PromptVariables::new("Domain", "do things", a);
            let ta = render_prompt(&v).unwrap().text;
            v.n_cqs = b;
            let tb = render_prompt(&v).unwrap().text;
            prop_assert_ne!(ta, tb);
        }
    }
}
