//! Competency question generation and evaluation.
//!
//! The pipeline: load and chunk a ranked corpus ([`corpus`]), index it with an
//! embedding provider ([`embed`]), render a zero-shot prompt ([`prompt`]),
//! optionally add retrieved context and ask a chat model ([`rag`], [`llm`]),
//! then score the returned questions against expert ground truth by embedding
//! similarity ([`evaluation`]) and compare settings with one-way ANOVA
//! ([`stats`]). [`runner`] sweeps a whole grid with a resumable manifest and
//! writes report tables; [`config`] loads all of it from one TOML file.
//!
//! Every capability has a runnable example:
//!
//! | example | shows |
//! |---|---|
//! | `chunking` | overlapping chunks and lossless reassembly |
//! | `retrieval` | index build, top-k search, context assembly |
//! | `render_prompt` | presets, custom variables, custom templates |
//! | `parse_cqs` | cleaning model output, the deterministic synthetic model |
//! | `evaluate_precision` | threshold matching and precision |
//! | `anova` | F statistic and p-value |
//! | `grid_experiment` | a full offline grid with interruption, resume and report |
//! | `live_generation` | one run against an OpenAI-compatible endpoint |
//!
//! Offline stand-ins for every remote provider live in [`mock`].

pub mod config;
pub mod corpus;
pub mod embed;
pub mod evaluation;
pub mod http;
pub mod limits;
pub mod llm;
pub mod mock;
pub mod prompt;
pub mod rag;
pub mod runner;
pub mod stats;
