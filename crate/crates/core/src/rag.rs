//! One generation run, end to end: select documents, chunk, index, retrieve
//! context for the rendered prompt, call the model and parse the questions.

use std::fmt;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{chunk_document, select_corpus, ChunkingPolicy, CorpusError, SourceDocument};
use crate::embed::{
    embed_texts, index_cache_key, EmbedError, EmbeddingProvider, EmbeddingVector, IndexCache,
    RetrievalHit, VectorIndex,
};
use crate::llm::{
    complete, parse_cqs, ChatRequest, LlmError, LlmProvider, OverflowPolicy, ParsedCqList,
    RetryPolicy,
};
use crate::prompt::{render_prompt, PromptError, PromptVariables, RenderedPrompt};

#[derive(Debug, Error)]
pub enum RagError {
    #[error("retrieval-augmented run needs a non-empty corpus")]
    EmptyCorpus,
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Rag,
    ZeroShot,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Rag => "rag",
            Mode::ZeroShot => "zero_shot",
        })
    }
}

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_MODEL: &str = "gpt-4o";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    /// Number of top-priority documents; `None` in zero-shot mode.
    pub n_paper: Option<usize>,
    pub temperature: f64,
    pub model: String,
    pub k: usize,
    pub repetition_index: usize,
    pub chunking: ChunkingPolicy,
    pub prompt_vars: PromptVariables,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
}

fn default_max_output_tokens() -> u32 {
    4096
}

impl RunConfig {
    pub fn zero_shot(prompt_vars: PromptVariables, temperature: f64) -> Self {
        Self {
            mode: Mode::ZeroShot,
            n_paper: None,
            temperature,
            model: DEFAULT_MODEL.into(),
            k: DEFAULT_K,
            repetition_index: 0,
            chunking: ChunkingPolicy::default(),
            prompt_vars,
            seed: None,
            max_output_tokens: default_max_output_tokens(),
        }
    }

    pub fn rag(prompt_vars: PromptVariables, n_paper: usize, temperature: f64) -> Self {
        Self {
            mode: Mode::Rag,
            n_paper: Some(n_paper),
            ..Self::zero_shot(prompt_vars, temperature)
        }
    }

    pub fn validate(&self) -> Result<(), RagError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(RagError::InvalidConfig(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.mode == Mode::Rag {
            match self.n_paper {
                Some(n) if n >= 1 => {}
                _ => {
                    return Err(RagError::InvalidConfig(
                        "rag mode needs n_paper >= 1".into(),
                    ))
                }
            }
            if self.k == 0 {
                return Err(RagError::InvalidConfig("k must be positive".into()));
            }
            self.chunking.validate()?;
        }
        self.prompt_vars.validate()?;
        Ok(())
    }

    /// Identifies the hyperparameter point, ignoring the repetition.
    pub fn setting_key(&self) -> String {
        match self.n_paper {
            Some(n) if self.mode == Mode::Rag => {
                format!("{}|n_paper={n}|temp={}", self.mode, self.temperature)
            }
            _ => format!("{}|temp={}", self.mode, self.temperature),
        }
    }

    pub fn run_id(&self) -> String {
        let temp = format!("{:.2}", self.temperature).replace('.', "_");
        match self.n_paper {
            Some(n) if self.mode == Mode::Rag => {
                format!("rag-n{n:02}-t{temp}-r{:02}", self.repetition_index)
            }
            _ => format!("zs-t{temp}-r{:02}", self.repetition_index),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunOutcome {
    Done,
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRun {
    pub run_id: String,
    pub config: RunConfig,
    pub outcome: RunOutcome,
    pub prompt: Option<RenderedPrompt>,
    #[serde(default)]
    pub selected_doc_ids: Vec<String>,
    #[serde(default)]
    pub index_key: Option<String>,
    pub retrieved_hits: Vec<RetrievalHit>,
    pub raw_response: Option<String>,
    pub parsed: Option<ParsedCqList>,
    #[serde(default)]
    pub diagnostics: Vec<String>,
    pub started_at_ms: u64,
    pub finished_at_ms: u64,
}

impl GenerationRun {
    pub fn is_done(&self) -> bool {
        self.outcome == RunOutcome::Done
    }

    /// The parsed questions, or nothing for a failed run.
    pub fn cqs(&self) -> &[String] {
        self.parsed.as_ref().map_or(&[], |p| &p.cqs)
    }

    /// Copy with timestamps zeroed, for comparisons across executions.
    pub fn without_timestamps(&self) -> Self {
        Self {
            started_at_ms: 0,
            finished_at_ms: 0,
            ..self.clone()
        }
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Embeds the full rendered prompt as the retrieval query.
pub fn build_query_vector<P: EmbeddingProvider + ?Sized>(
    prompt: &RenderedPrompt,
    provider: &P,
) -> Result<EmbeddingVector, EmbedError> {
    let mut vectors = embed_texts(provider, std::slice::from_ref(&prompt.text))?;
    Ok(vectors.remove(0))
}

pub fn context_header(doc_id: &str, chunk_index: usize) -> String {
    format!("[{doc_id} · {chunk_index}]")
}

/// One context block per hit, in the given order, each headed by its source.
pub fn assemble_context(hits: &[RetrievalHit]) -> Vec<String> {
    hits.iter()
        .map(|h| {
            format!(
                "{}\n{}",
                context_header(&h.chunk.doc_id, h.chunk.chunk_index),
                h.chunk.text
            )
        })
        .collect()
}

/// Holds the providers and the shared index cache. Cheap to share across
/// worker threads.
pub struct RagEngine {
    retrieval: Arc<dyn EmbeddingProvider>,
    llm: Arc<dyn LlmProvider>,
    cache: IndexCache,
    pub retry: RetryPolicy,
    pub overflow: OverflowPolicy,
}

impl RagEngine {
    pub fn new(retrieval: Arc<dyn EmbeddingProvider>, llm: Arc<dyn LlmProvider>) -> Self {
        Self {
            retrieval,
            llm,
            cache: IndexCache::new(),
            retry: RetryPolicy::default(),
            overflow: OverflowPolicy::default(),
        }
    }

    pub fn cache(&self) -> &IndexCache {
        &self.cache
    }

    pub fn retrieval_provider(&self) -> &dyn EmbeddingProvider {
        self.retrieval.as_ref()
    }

    /// Builds (or fetches from cache) the index over `docs`.
    pub fn index_for(
        &self,
        docs: &[SourceDocument],
        policy: &ChunkingPolicy,
    ) -> Result<(String, Arc<VectorIndex>), RagError> {
        if docs.is_empty() {
            return Err(RagError::EmptyCorpus);
        }
        let ids: Vec<String> = docs.iter().map(|d| d.doc_id.clone()).collect();
        let key = index_cache_key(&ids, policy, &self.retrieval.provider_id());
        let index = self.cache.get_or_build(&key, || {
            let mut chunks = Vec::new();
            for doc in docs {
                chunks.extend(
                    chunk_document(doc, policy).map_err(|e| EmbedError::Format(e.to_string()))?,
                );
            }
            VectorIndex::build(self.retrieval.as_ref(), chunks)
        })?;
        Ok((key, index))
    }

    /// Executes one run. Configuration and precondition problems are returned
    /// as errors; failures of the providers produce a run with a `failed`
    /// outcome that keeps every intermediate captured so far.
    pub fn run_generation(
        &self,
        config: &RunConfig,
        corpus: &[SourceDocument],
    ) -> Result<GenerationRun, RagError> {
        config.validate()?;
        if config.mode == Mode::Rag && corpus.is_empty() {
            return Err(RagError::EmptyCorpus);
        }
        let mut run = GenerationRun {
            run_id: config.run_id(),
            config: config.clone(),
            outcome: RunOutcome::Done,
            prompt: None,
            selected_doc_ids: Vec::new(),
            index_key: None,
            retrieved_hits: Vec::new(),
            raw_response: None,
            parsed: None,
            diagnostics: Vec::new(),
            started_at_ms: now_ms(),
            finished_at_ms: 0,
        };
        if let Err(e) = self.fill_run(&mut run, corpus) {
            run.outcome = RunOutcome::Failed {
                error: e.to_string(),
            };
        }
        run.finished_at_ms = now_ms();
        Ok(run)
    }

    fn fill_run(&self, run: &mut GenerationRun, corpus: &[SourceDocument]) -> Result<(), RagError> {
        let config = &run.config;
        let prompt = render_prompt(&config.prompt_vars)?;
        run.prompt = Some(prompt.clone());

        let mut context = Vec::new();
        if config.mode == Mode::Rag {
            let n_paper = config.n_paper.expect("validated");
            let selection = select_corpus(corpus, n_paper)?;
            if selection.truncated {
                run.diagnostics.push(format!(
                    "requested {n_paper} documents, corpus has {}",
                    selection.documents.len()
                ));
            }
            run.selected_doc_ids = selection
                .documents
                .iter()
                .map(|d| d.doc_id.clone())
                .collect();
            let (key, index) = self.index_for(&selection.documents, &config.chunking)?;
            run.index_key = Some(key);
            let query = build_query_vector(&prompt, self.retrieval.as_ref())?;
            run.retrieved_hits = index.retrieve_top_k(&query, config.k)?;
            if run.retrieved_hits.is_empty() {
                run.diagnostics
                    .push("degraded: retrieval returned no chunks".into());
            }
            context = assemble_context(&run.retrieved_hits);
        }

        let request = ChatRequest {
            model: config.model.clone(),
            temperature: config.temperature,
            prompt_text: prompt.text,
            context_blocks: context,
            max_output_tokens: config.max_output_tokens,
            request_seed: config.seed,
        };
        let response = complete(self.llm.as_ref(), &request, &self.retry, self.overflow)?;
        run.raw_response = Some(response.raw_text.clone());
        run.parsed = Some(parse_cqs(
            &response.raw_text,
            config.prompt_vars.n_cqs as usize,
        )?);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ingest_document, Chunk, SourceFormat};
    use crate::embed::HashNgramEmbedder;
    use crate::llm::ScriptedLlm;
    use crate::prompt::presets;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting(HashNgramEmbedder, AtomicUsize);
    impl EmbeddingProvider for Counting {
        fn provider_id(&self) -> String {
            self.0.provider_id()
        }
        fn embed_batch(&self, t: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
            self.1.fetch_add(1, Ordering::SeqCst);
            self.0.embed_batch(t)
        }
    }

    fn fifteen() -> String {
        (1..=15)
            .map(|i| format!("{i}. What is concept {i}?\n"))
            .collect()
    }

    fn corpus() -> Vec<SourceDocument> {
        let texts = [
            ("visionary", "Empirical research in requirements engineering must mature. Replication and theory building matter. "),
            ("survey", "Surveys of practitioners reveal how requirements are elicited in industry and which methods are used. "),
            ("mapping", "A systematic mapping study classifies evaluation research, validation research and solution proposals. "),
        ];
        texts
            .iter()
            .enumerate()
            .map(|(i, (id, t))| {
                ingest_document(&t.repeat(6)[..], SourceFormat::PlainText, id, i as u32 + 1)
                    .unwrap()
            })
            .collect()
    }

    fn engine(llm: ScriptedLlm) -> (RagEngine, Arc<Counting>) {
        let emb = Arc::new(Counting(HashNgramEmbedder::default(), AtomicUsize::new(0)));
        (RagEngine::new(emb.clone(), Arc::new(llm)), emb)
    }

    fn small_chunks(mut c: RunConfig) -> RunConfig {
        c.chunking = ChunkingPolicy::new(120, 20).unwrap();
        c
    }

    #[test]
    fn zero_shot_skips_embedding() {
        let (engine, emb) = engine(ScriptedLlm::always(&fifteen()));
        let cfg = RunConfig::zero_shot(presets::human_computer_interaction(), 1.0);
        let run = engine.run_generation(&cfg, &[]).unwrap();
        assert!(run.is_done());
        assert_eq!(run.cqs().len(), 15);
        assert!(run.retrieved_hits.is_empty());
        assert_eq!(emb.1.load(Ordering::SeqCst), 0);
        assert_eq!(run.run_id, "zs-t1_00-r00");
    }

    #[test]
    fn single_document_provenance() {
        let (engine, _) = engine(ScriptedLlm::always(&fifteen()));
        let mut cfg = small_chunks(RunConfig::rag(presets::requirements_engineering(), 1, 0.5));
        cfg.k = 3;
        let run = engine.run_generation(&cfg, &corpus()).unwrap();
        assert!(run.is_done());
        assert_eq!(run.retrieved_hits.len(), 3);
        assert!(run
            .retrieved_hits
            .iter()
            .all(|h| h.chunk.doc_id == "visionary"));
        assert_eq!(run.selected_doc_ids, vec!["visionary"]);
    }

    #[test]
    fn empty_corpus_is_precondition_error() {
        let (engine, _) = engine(ScriptedLlm::always(&fifteen()));
        let cfg = RunConfig::rag(presets::requirements_engineering(), 1, 0.5);
        assert!(matches!(
            engine.run_generation(&cfg, &[]),
            Err(RagError::EmptyCorpus)
        ));
    }

    #[test]
    fn provider_failure_is_recorded() {
        let (engine, _) = engine(ScriptedLlm::new());
        let cfg = small_chunks(RunConfig::rag(presets::requirements_engineering(), 2, 0.5));
        let run = engine.run_generation(&cfg, &corpus()).unwrap();
        assert!(matches!(run.outcome, RunOutcome::Failed { .. }));
        assert!(!run.retrieved_hits.is_empty());
        assert!(run.raw_response.is_none());
    }

    #[test]
    fn deterministic_and_cache_transparent() {
        let (engine, emb) = engine(ScriptedLlm::always(&fifteen()));
        let cfg = small_chunks(RunConfig::rag(presets::requirements_engineering(), 3, 0.5));
        let a = engine.run_generation(&cfg, &corpus()).unwrap();
        let calls = emb.1.load(Ordering::SeqCst);
        let b = engine.run_generation(&cfg, &corpus()).unwrap();
        assert_eq!(engine.cache().builds(), 1);
        // second run only embeds the query
        assert_eq!(emb.1.load(Ordering::SeqCst), calls + 1);
        assert_eq!(a.without_timestamps(), b.without_timestamps());

        let (fresh, _) = self::engine(ScriptedLlm::always(&fifteen()));
        let c = fresh.run_generation(&cfg, &corpus()).unwrap();
        assert_eq!(a.retrieved_hits, c.retrieved_hits);
    }

    #[test]
    fn query_vectors() {
        let e = HashNgramEmbedder::default();
        let re = render_prompt(&presets::requirements_engineering()).unwrap();
        let hci = render_prompt(&presets::human_computer_interaction()).unwrap();
        assert_eq!(
            build_query_vector(&re, &e).unwrap(),
            build_query_vector(&re, &e).unwrap()
        );
        assert_ne!(
            build_query_vector(&re, &e).unwrap(),
            build_query_vector(&hci, &e).unwrap()
        );
    }

    #[test]
    fn context_blocks() {
        assert!(assemble_context(&[]).is_empty());
        let hit = |doc: &str, i: usize, score: f64| RetrievalHit {
            chunk: Chunk {
                doc_id: doc.into(),
                chunk_index: i,
                span_start: 0,
                span_end: 4,
                text: format!("text{i}"),
            },
            score,
        };
        assert_eq!(
            assemble_context(&[hit("visionary", 0, 0.9)]),
            vec!["[visionary · 0]\ntext0"]
        );
        let hits: Vec<_> = (0..5).map(|i| hit("d", i, 1.0 - i as f64 * 0.1)).collect();
        let blocks = assemble_context(&hits);
        assert_eq!(blocks.len(), 5);
        for (i, b) in blocks.iter().enumerate() {
            assert!(b.starts_with(&format!("[d · {i}]\n")));
        }
    }

    #[test]
    fn config_validation_and_keys() {
        let mut cfg = RunConfig::rag(presets::requirements_engineering(), 10, 1.25);
        cfg.repetition_index = 7;
        assert_eq!(cfg.run_id(), "rag-n10-t1_25-r07");
        assert_eq!(cfg.setting_key(), "rag|n_paper=10|temp=1.25");
        cfg.temperature = 2.5;
        assert!(cfg.validate().is_err());
        cfg.temperature = 1.0;
        cfg.n_paper = None;
        assert!(cfg.validate().is_err());
    }
}
