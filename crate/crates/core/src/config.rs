//! Workbench configuration file.
//!
//! ```toml
//! [task]
//! task_id = "hci"
//! preset = "human_computer_interaction"
//! ground_truth = "ground_truth.txt"
//! corpus = "corpus.toml"
//!
//! [grid]
//! modes = ["rag", "zero_shot"]
//! n_paper_levels = [1, 2, 3]
//! temperature_levels = [0.5, 1.0]
//! repetitions = 3
//!
//! [llm]
//! provider = "remote"
//! endpoint = "https://api.example.com/v1"
//!
//! [retrieval_embedding]
//! provider = "http"
//! endpoint = "https://api.example.com/v1"
//! model = "text-embedding-3-large"
//! ```
//!
//! Relative paths resolve against the directory holding the config file.
//! Credentials are never read from here; remote providers name an environment
//! variable instead.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{load_corpus, ChunkingPolicy, CommandExtractor, CorpusError, SourceDocument};
use crate::embed::{EmbeddingProvider, HashNgramEmbedder, HttpEmbedder, HttpEmbedderConfig};
use crate::evaluation::{EvalError, GroundTruthSet, DEFAULT_THETA};
use crate::llm::{
    LlmError, LlmProvider, OverflowPolicy, RemoteLlm, RemoteLlmConfig, RetryPolicy, ScriptedLlm,
};
use crate::mock;
use crate::prompt::{presets, PromptVariables};
use crate::rag::{Mode, RagEngine, DEFAULT_K, DEFAULT_MODEL};
use crate::runner::ExperimentGrid;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub task_id: String,
    /// Name of a built-in preset; ignored when `prompt` is given.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub prompt: Option<PromptVariables>,
    pub ground_truth: PathBuf,
    /// Corpus manifest (TOML). Optional for zero-shot only grids.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "default_modes")]
    pub modes: Vec<Mode>,
    #[serde(default = "default_paper_levels")]
    pub n_paper_levels: Vec<usize>,
    #[serde(default = "default_temperatures")]
    pub temperature_levels: Vec<f64>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_modes() -> Vec<Mode> {
    vec![Mode::Rag]
}
fn default_paper_levels() -> Vec<usize> {
    vec![1, 2, 3, 4, 5, 10]
}
fn default_temperatures() -> Vec<f64> {
    vec![0.5, 0.75, 1.0, 1.25, 1.5]
}
fn default_repetitions() -> usize {
    10
}
fn default_model() -> String {
    DEFAULT_MODEL.into()
}
fn default_k() -> usize {
    DEFAULT_K
}
fn default_theta() -> f64 {
    DEFAULT_THETA
}
fn default_parallel() -> usize {
    1
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            modes: default_modes(),
            n_paper_levels: default_paper_levels(),
            temperature_levels: default_temperatures(),
            repetitions: default_repetitions(),
            model: default_model(),
            k: default_k(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    #[serde(default = "default_theta")]
    pub theta: f64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            theta: DEFAULT_THETA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "provider", rename_all = "snake_case")]
pub enum LlmBackend {
    /// Synthetic answers drawn from the ground truth and generic distractors.
    #[default]
    Mock,
    /// Canned responses from a JSON fixture script.
    Scripted {
        script: PathBuf,
    },
    Remote(RemoteLlmConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct LlmSection {
    #[serde(flatten)]
    pub backend: LlmBackend,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub overflow: OverflowPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provider", rename_all = "snake_case")]
pub enum EmbeddingBackend {
    Mock {
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_ngram")]
        n: usize,
    },
    Http(HttpEmbedderConfig),
}

fn default_dim() -> usize {
    256
}
fn default_ngram() -> usize {
    3
}

impl Default for EmbeddingBackend {
    fn default() -> Self {
        Self::Mock {
            dim: default_dim(),
            n: default_ngram(),
        }
    }
}

impl EmbeddingBackend {
    pub fn build(&self) -> Arc<dyn EmbeddingProvider> {
        match self {
            Self::Mock { dim, n } => Arc::new(HashNgramEmbedder { dim: *dim, n: *n }),
            Self::Http(cfg) => Arc::new(HttpEmbedder::new(cfg.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunnerSection {
    #[serde(default = "default_parallel")]
    pub parallel: usize,
    /// Experiment directory holding the manifest and run records.
    #[serde(default)]
    pub workdir: Option<PathBuf>,
}

impl Default for RunnerSection {
    fn default() -> Self {
        Self {
            parallel: default_parallel(),
            workdir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkbenchConfig {
    pub task: TaskSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub chunking: ChunkingPolicy,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub llm: LlmSection,
    #[serde(default)]
    pub retrieval_embedding: EmbeddingBackend,
    #[serde(default)]
    pub evaluation_embedding: EmbeddingBackend,
    #[serde(default)]
    pub runner: RunnerSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl WorkbenchConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Self = toml::from_str(text)?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.prompt_vars()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Replaces every provider with its offline mock.
    pub fn use_mocks(&mut self) {
        self.llm.backend = LlmBackend::Mock;
        self.retrieval_embedding = EmbeddingBackend::default();
        self.evaluation_embedding = EmbeddingBackend::default();
    }

    pub fn prompt_vars(&self) -> Result<PromptVariables, ConfigError> {
        let vars = match (&self.task.prompt, self.task.preset.as_deref()) {
            (Some(vars), _) => vars.clone(),
            (None, Some("requirements_engineering")) => presets::requirements_engineering(),
            (None, Some("human_computer_interaction")) => presets::human_computer_interaction(),
            (None, Some(other)) => {
                return Err(ConfigError::Invalid(format!("unknown preset `{other}`")))
            }
            (None, None) => {
                return Err(ConfigError::Invalid(
                    "task needs a preset or a prompt table".into(),
                ))
            }
        };
        vars.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(vars)
    }

    pub fn grid(&self) -> Result<ExperimentGrid, ConfigError> {
        let g = &self.grid;
        Ok(ExperimentGrid {
            task_id: self.task.task_id.clone(),
            modes: g.modes.clone(),
            n_paper_levels: g.n_paper_levels.clone(),
            temperature_levels: g.temperature_levels.clone(),
            repetitions: g.repetitions,
            model: g.model.clone(),
            k: g.k,
            theta: self.evaluation.theta,
            seed: g.seed,
            chunking: self.chunking,
            prompt_vars: self.prompt_vars()?,
        })
    }

    pub fn ground_truth(&self) -> Result<GroundTruthSet, ConfigError> {
        let gt = GroundTruthSet::load(&self.resolve(&self.task.ground_truth))?;
        Ok(GroundTruthSet::new(&self.task.task_id, gt.cqs)?)
    }

    /// The corpus, or an empty one when no manifest is configured.
    pub fn corpus(&self) -> Result<Vec<SourceDocument>, ConfigError> {
        match &self.task.corpus {
            Some(path) => Ok(load_corpus(
                &self.resolve(path),
                Some(&CommandExtractor::pdftotext()),
            )?),
            None => Ok(Vec::new()),
        }
    }

    pub fn llm(&self, ground_truth: &GroundTruthSet) -> Result<Arc<dyn LlmProvider>, ConfigError> {
        Ok(match &self.llm.backend {
            LlmBackend::Mock => Arc::new(mock::synthetic_llm(ground_truth)),
            LlmBackend::Scripted { script } => Arc::new(ScriptedLlm::load(&self.resolve(script))?),
            LlmBackend::Remote(cfg) => Arc::new(RemoteLlm::new(cfg.clone())),
        })
    }

    pub fn engine(&self, ground_truth: &GroundTruthSet) -> Result<RagEngine, ConfigError> {
        let mut engine = RagEngine::new(self.retrieval_embedding.build(), self.llm(ground_truth)?);
        engine.retry = self.llm.retry;
        engine.overflow = self.llm.overflow;
        Ok(engine)
    }

    pub fn evaluation_embedder(&self) -> Arc<dyn EmbeddingProvider> {
        self.evaluation_embedding.build()
    }

    /// Configured experiment directory, defaulting to `runs/<task_id>`.
    pub fn workdir(&self) -> PathBuf {
        match &self.runner.workdir {
            Some(dir) => self.resolve(dir),
            None => self.base_dir.join("runs").join(&self.task.task_id),
        }
    }
}
