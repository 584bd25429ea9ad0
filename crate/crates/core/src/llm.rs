//! Chat-completion providers and competency question parsing.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embed::hex;
use crate::limits::{InFlightLimiter, TokenBudget};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("LLM provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited {
        attempts: u32,
        retry_after: Option<Duration>,
    },
    #[error("assembled input of {chars} chars exceeds provider limit of {limit}")]
    ContextOverflow { chars: usize, limit: usize },
    #[error("no competency questions found in response")]
    NoQuestionsFound,
    #[error("fixture script: {0}")]
    Script(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub prompt_text: String,
    /// Retrieved context, best first. Empty for zero-shot prompting.
    #[serde(default)]
    pub context_blocks: Vec<String>,
    pub max_output_tokens: u32,
    #[serde(default)]
    pub request_seed: Option<u64>,
}

impl ChatRequest {
    pub fn new(model: &str, temperature: f64, prompt_text: &str) -> Self {
        Self {
            model: model.into(),
            temperature,
            prompt_text: prompt_text.into(),
            context_blocks: Vec::new(),
            max_output_tokens: 4096,
            request_seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.prompt_text.trim().is_empty() {
            return Err(LlmError::InvalidRequest("prompt_text is empty".into()));
        }
        if self.model.trim().is_empty() {
            return Err(LlmError::InvalidRequest("model is empty".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(LlmError::InvalidRequest(
                "max_output_tokens must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Context blocks followed by the prompt, separated by blank lines.
    pub fn assembled_input(&self) -> String {
        let mut out = String::new();
        for block in &self.context_blocks {
            out.push_str(block);
            out.push_str("\n\n");
        }
        out.push_str(&self.prompt_text);
        out
    }

    /// SHA-256 over the canonical JSON encoding of the request.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("request serializes");
        hex(&Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub raw_text: String,
    #[serde(default)]
    pub provider_metadata: BTreeMap<String, String>,
    pub latency_ms: u64,
}

/// How the assembled input is split into chat messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageLayout {
    /// Everything in one user message.
    #[default]
    SingleUser,
    /// Context in a system message, prompt as the user message.
    SystemUser,
}

pub trait LlmProvider: Send + Sync {
    fn provider_id(&self) -> String;

    /// Largest assembled input (in chars) the provider accepts, if bounded.
    fn max_input_chars(&self) -> Option<usize> {
        None
    }

    /// Sends one already-validated request. Retry policy lives in [`complete`].
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

impl<P: LlmProvider + ?Sized> LlmProvider for std::sync::Arc<P> {
    fn provider_id(&self) -> String {
        (**self).provider_id()
    }
    fn max_input_chars(&self) -> Option<usize> {
        (**self).max_input_chars()
    }
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).send(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverflowPolicy {
    #[default]
    Error,
    /// Drop context blocks from the end (lowest scored) until the input fits.
    TruncateContext,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            backoff_base_ms: 500,
        }
    }
}

/// Validates, fits the context to the provider limit and dispatches with
/// exponential backoff on rate limiting.
pub fn complete<P: LlmProvider + ?Sized>(
    provider: &P,
    request: &ChatRequest,
    retry: &RetryPolicy,
    overflow: OverflowPolicy,
) -> Result<ChatResponse, LlmError> {
    request.validate()?;
    let mut request = request.clone();
    if let Some(limit) = provider.max_input_chars() {
        loop {
            let chars = request.assembled_input().chars().count();
            if chars <= limit {
                break;
            }
            match overflow {
                OverflowPolicy::TruncateContext if !request.context_blocks.is_empty() => {
                    request.context_blocks.pop();
                }
                _ => return Err(LlmError::ContextOverflow { chars, limit }),
            }
        }
    }
    let attempts = retry.max_attempts.max(1);
    let mut attempt = 0;
    loop {
        attempt += 1;
        match provider.send(&request) {
            Err(LlmError::RateLimited { retry_after, .. }) => {
                if attempt >= attempts {
                    return Err(LlmError::RateLimited {
                        attempts: attempt,
                        retry_after,
                    });
                }
                let backoff = Duration::from_millis(
                    retry
                        .backoff_base_ms
                        .saturating_mul(1 << (attempt - 1).min(16)),
                );
                let wait = retry_after.map_or(backoff, |r| r.max(backoff));
                log::warn!("rate limited, retrying in {wait:?} (attempt {attempt}/{attempts})");
                std::thread::sleep(wait);
            }
            other => return other,
        }
    }
}

/// Fixture-driven mock: responses keyed by request fingerprint, with an
/// optional fallback.
#[derive(Debug, Default)]
pub struct ScriptedLlm {
    responses: HashMap<String, String>,
    fallback: Option<String>,
    calls: AtomicUsize,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct FixtureScript {
    #[serde(default)]
    pub default: Option<String>,
    #[serde(default)]
    pub responses: BTreeMap<String, String>,
}

impl ScriptedLlm {
    pub fn new() -> Self {
        Self::default()
    }

    /// Answers every request with `text`.
    pub fn always(text: &str) -> Self {
        Self {
            fallback: Some(text.into()),
            ..Self::default()
        }
    }

    pub fn register(&mut self, request: &ChatRequest, response: &str) {
        self.responses
            .insert(request.fingerprint(), response.into());
    }

    pub fn from_script(script: FixtureScript) -> Self {
        Self {
            responses: script.responses.into_iter().collect(),
            fallback: script.default,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Script(e.to_string()))?;
        let script: FixtureScript =
            serde_json::from_str(&text).map_err(|e| LlmError::Script(e.to_string()))?;
        Ok(Self::from_script(script))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LlmProvider for ScriptedLlm {
    fn provider_id(&self) -> String {
        "mock-scripted".into()
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let fp = request.fingerprint();
        let text = self
            .responses
            .get(&fp)
            .or(self.fallback.as_ref())
            .ok_or_else(|| LlmError::ProviderUnavailable(format!("no fixture for request {fp}")))?;
        Ok(ChatResponse {
            raw_text: text.clone(),
            provider_metadata: BTreeMap::from([("fingerprint".into(), fp)]),
            latency_ms: 0,
        })
    }
}

/// Deterministic stand-in for a real model, used to drive whole experiment
/// grids offline.
///
/// It answers with a numbered list of `n` questions, where `n` is read from the
/// "Derive N" instruction. Each question is drawn from `on_topic` with
/// probability `p` and from `off_topic` otherwise, where
/// `p = base_relevance + context_gain * d / (1 + d)` for `d` distinct source
/// documents in the context, jittered by `temperature * jitter`. The random
/// stream is seeded from the request fingerprint, so the output is a pure
/// function of the request.
#[derive(Debug, Clone)]
pub struct SyntheticLlm {
    pub on_topic: Vec<String>,
    pub off_topic: Vec<String>,
    pub base_relevance: f64,
    pub context_gain: f64,
    pub jitter: f64,
    calls: std::sync::Arc<AtomicUsize>,
}

const REPHRASINGS: [&str; 4] = [
    "",
    "In this domain, ",
    "Specifically, ",
    "According to the literature, ",
];

impl SyntheticLlm {
    pub fn new(on_topic: Vec<String>, off_topic: Vec<String>) -> Self {
        assert!(
            !on_topic.is_empty() && !off_topic.is_empty(),
            "question pools must be non-empty"
        );
        Self {
            on_topic,
            off_topic,
            base_relevance: 0.3,
            context_gain: 0.5,
            jitter: 0.2,
            calls: Default::default(),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn requested_count(prompt: &str) -> usize {
        prompt
            .split("Derive ")
            .nth(1)
            .and_then(|rest| rest.split_whitespace().next())
            .and_then(|n| n.parse().ok())
            .unwrap_or(10)
    }

    fn context_docs(blocks: &[String]) -> usize {
        blocks
            .iter()
            .filter_map(|b| b.strip_prefix('[').and_then(|h| h.split(" · ").next()))
            .collect::<HashSet<_>>()
            .len()
    }

    fn draw(
        pool: &[String],
        order: &mut Vec<usize>,
        used: &mut usize,
        rng: &mut ChaCha8Rng,
    ) -> String {
        if order.is_empty() {
            order.extend(0..pool.len());
            order.shuffle(rng);
        }
        let round = *used / pool.len();
        let q = &pool[order[*used % pool.len()]];
        *used += 1;
        match REPHRASINGS[round % REPHRASINGS.len()] {
            "" => q.clone(),
            prefix => {
                let mut chars = q.chars();
                let first = chars
                    .next()
                    .map(|c| c.to_lowercase().to_string())
                    .unwrap_or_default();
                format!("{prefix}{first}{}", chars.as_str())
            }
        }
    }
}

impl LlmProvider for SyntheticLlm {
    fn provider_id(&self) -> String {
        format!(
            "mock-synthetic-{}x{}",
            self.on_topic.len(),
            self.off_topic.len()
        )
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let fp = request.fingerprint();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&Sha256::digest(fp.as_bytes()));
        let mut rng = ChaCha8Rng::from_seed(seed);

        let n = Self::requested_count(&request.prompt_text);
        let d = Self::context_docs(&request.context_blocks) as f64;
        let noise = rng.random_range(-1.0..=1.0) * self.jitter * request.temperature;
        let p = (self.base_relevance + self.context_gain * d / (1.0 + d) + noise).clamp(0.02, 0.98);

        let (mut on_order, mut off_order) = (Vec::new(), Vec::new());
        let (mut on_used, mut off_used) = (0, 0);
        let mut text = String::new();
        if request.temperature > 1.2 && rng.random_bool(0.5) {
            text.push_str("Here are the competency questions:\n\n");
        }
        for i in 0..n {
            let q = if rng.random_bool(p) {
                Self::draw(&self.on_topic, &mut on_order, &mut on_used, &mut rng)
            } else {
                Self::draw(&self.off_topic, &mut off_order, &mut off_used, &mut rng)
            };
            text.push_str(&format!("{}. {q}\n", i + 1));
        }
        Ok(ChatResponse {
            raw_text: text,
            provider_metadata: BTreeMap::from([
                ("fingerprint".into(), fp),
                ("relevance".into(), format!("{p:.6}")),
            ]),
            latency_ms: 0,
        })
    }
}

/// Wraps a provider and fails every request matching `should_fail`.
pub struct FaultyLlm<P> {
    pub inner: P,
    should_fail: Box<dyn Fn(&ChatRequest) -> bool + Send + Sync>,
}

impl<P: LlmProvider> FaultyLlm<P> {
    pub fn new(
        inner: P,
        should_fail: impl Fn(&ChatRequest) -> bool + Send + Sync + 'static,
    ) -> Self {
        Self {
            inner,
            should_fail: Box::new(should_fail),
        }
    }
}

impl<P: LlmProvider> LlmProvider for FaultyLlm<P> {
    fn provider_id(&self) -> String {
        self.inner.provider_id()
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        if (self.should_fail)(request) {
            return Err(LlmError::ProviderUnavailable("injected fault".into()));
        }
        self.inner.send(request)
    }
}

/// Settings for [`RemoteLlm`]. The API key is only ever read from the
/// environment variable named by `api_key_env`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteLlmConfig {
    pub endpoint: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default)]
    pub layout: MessageLayout,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub tokens_per_minute: Option<u64>,
    #[serde(default)]
    pub max_input_chars: Option<usize>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_key_env() -> String {
    "CQWB_API_KEY".into()
}
fn default_in_flight() -> usize {
    2
}
fn default_timeout() -> u64 {
    120
}

/// Client for the widespread `chat/completions` JSON protocol.
pub struct RemoteLlm {
    config: RemoteLlmConfig,
    agent: ureq::Agent,
    limiter: InFlightLimiter,
    budget: Option<TokenBudget>,
}

#[derive(Serialize)]
struct Message<'a> {
    role: &'a str,
    content: String,
}

#[derive(Serialize)]
struct ChatBody<'a> {
    model: &'a str,
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    messages: Vec<Message<'a>>,
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    model: Option<String>,
    #[serde(default)]
    id: Option<String>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReplyMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChatReplyMessage {
    #[serde(default)]
    content: Option<String>,
}

impl RemoteLlm {
    pub fn new(config: RemoteLlmConfig) -> Self {
        Self {
            agent: crate::http::agent(config.timeout_secs),
            limiter: InFlightLimiter::new(config.max_in_flight),
            budget: config.tokens_per_minute.map(TokenBudget::new),
            config,
        }
    }

    fn messages(&self, request: &ChatRequest) -> Vec<Message<'static>> {
        match self.config.layout {
            MessageLayout::SingleUser => vec![Message {
                role: "user",
                content: request.assembled_input(),
            }],
            MessageLayout::SystemUser if !request.context_blocks.is_empty() => vec![
                Message {
                    role: "system",
                    content: request.context_blocks.join("\n\n"),
                },
                Message {
                    role: "user",
                    content: request.prompt_text.clone(),
                },
            ],
            MessageLayout::SystemUser => vec![Message {
                role: "user",
                content: request.prompt_text.clone(),
            }],
        }
    }
}

impl LlmProvider for RemoteLlm {
    fn provider_id(&self) -> String {
        format!("http:{}", self.config.endpoint)
    }

    fn max_input_chars(&self) -> Option<usize> {
        self.config.max_input_chars
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        if let Some(budget) = &self.budget {
            let estimate = request.assembled_input().chars().count() as u64 / 4
                + u64::from(request.max_output_tokens);
            budget.reserve(estimate);
        }
        let _permit = self.limiter.acquire();
        let body = ChatBody {
            model: &request.model,
            temperature: request.temperature,
            max_tokens: request.max_output_tokens,
            seed: request.request_seed,
            messages: self.messages(request),
        };
        let start = Instant::now();
        let reply: ChatReply = crate::http::post_json(
            &self.agent,
            &self.config.endpoint,
            &self.config.api_key_env,
            &body,
        )
        .map_err(|e| {
            if e.is_rate_limit() {
                LlmError::RateLimited {
                    attempts: 1,
                    retry_after: e.retry_after,
                }
            } else {
                LlmError::ProviderUnavailable(e.message)
            }
        })?;
        let latency_ms = start.elapsed().as_millis() as u64;
        let choice = reply
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| LlmError::ProviderUnavailable("response has no choices".into()))?;
        let mut provider_metadata = BTreeMap::new();
        if let Some(model) = reply.model {
            provider_metadata.insert("model".into(), model);
        }
        if let Some(id) = reply.id {
            provider_metadata.insert("id".into(), id);
        }
        if let Some(reason) = choice.finish_reason {
            provider_metadata.insert("finish_reason".into(), reason);
        }
        Ok(ChatResponse {
            raw_text: choice.message.content.unwrap_or_default(),
            provider_metadata,
            latency_ms,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseDiagnostic {
    CountMismatch { expected: usize, found: usize },
    StrippedPreamble { line: String },
    StrippedEpilogue { line: String },
    DroppedNonQuestion { line: String },
    DuplicateRemoved { line: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedCqList {
    pub cqs: Vec<String>,
    pub expected_n: usize,
    pub diagnostics: Vec<ParseDiagnostic>,
}

/// Removes one leading list marker: `1.`, `1)`, `(1)`, `Q1:`, `-`, `*`, `•`,
/// `#`. Returns `None` if there is none.
fn strip_marker(line: &str) -> Option<&str> {
    let s = line;
    for bullet in ["- ", "* ", "• ", "– ", "-\t", "*\t"] {
        if let Some(rest) = s.strip_prefix(bullet) {
            return Some(rest);
        }
    }
    if s.starts_with('#') {
        return Some(s.trim_start_matches('#'));
    }
    let (body, paren_open) = match s.strip_prefix('(') {
        Some(rest) => (rest, true),
        None => (s, false),
    };
    let body = body
        .strip_prefix("Q")
        .or_else(|| body.strip_prefix("q"))
        .filter(|r| r.starts_with(|c: char| c.is_ascii_digit()))
        .unwrap_or(body);
    let digits = body.len() - body.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 {
        return None;
    }
    let after = &body[digits..];
    let rest = if paren_open {
        after.strip_prefix(')')?
    } else {
        after
            .strip_prefix(". ")
            .or_else(|| after.strip_prefix(") "))
            .or_else(|| after.strip_prefix(": "))
            .or_else(|| {
                after
                    .strip_prefix('.')
                    .filter(|r| r.is_empty() || r.starts_with(char::is_whitespace))
            })
            .or_else(|| after.strip_prefix(')'))
            .or_else(|| after.strip_prefix(':'))?
    };
    Some(rest)
}

const QUOTES: [char; 6] = ['"', '\'', '“', '”', '‘', '’'];

fn clean_line(line: &str) -> String {
    let mut s = line.trim();
    loop {
        let before = s;
        if let Some(rest) = strip_marker(s) {
            s = rest.trim();
        }
        // Bold list markers such as `**3.** text`.
        if let Some((marker, rest)) = s.strip_prefix("**").and_then(|r| r.split_once("**")) {
            if strip_marker(&format!("{marker} ")).is_some_and(|r| r.trim().is_empty()) {
                s = rest.trim();
            }
        }
        if let Some(inner) = s.strip_prefix("**").and_then(|r| r.strip_suffix("**")) {
            s = inner.trim();
        }
        if s.len() >= 2 && s.starts_with(QUOTES) && s.ends_with(QUOTES) {
            let first = s.chars().next().unwrap().len_utf8();
            let last = s.chars().last().unwrap().len_utf8();
            s = s[first..s.len() - last].trim();
        }
        if s == before {
            return s.to_string();
        }
    }
}

/// Extracts the competency questions from a raw model response.
pub fn parse_cqs(raw: &str, expected_n: usize) -> Result<ParsedCqList, LlmError> {
    let mut cqs: Vec<String> = Vec::new();
    let mut seen = HashSet::new();
    let mut diagnostics = Vec::new();
    let mut trailing = Vec::new();

    for line in raw.lines() {
        let cleaned = clean_line(line);
        if cleaned.is_empty() {
            continue;
        }
        if !cleaned.ends_with('?') {
            if cqs.is_empty() {
                diagnostics.push(ParseDiagnostic::StrippedPreamble { line: cleaned });
            } else {
                trailing.push(cleaned);
            }
            continue;
        }
        // Non-question lines between questions are not an epilogue.
        for line in trailing.drain(..) {
            diagnostics.push(ParseDiagnostic::DroppedNonQuestion { line });
        }
        if seen.insert(cleaned.to_lowercase()) {
            cqs.push(cleaned);
        } else {
            diagnostics.push(ParseDiagnostic::DuplicateRemoved { line: cleaned });
        }
    }
    for line in trailing {
        diagnostics.push(ParseDiagnostic::StrippedEpilogue { line });
    }
    if cqs.is_empty() {
        return Err(LlmError::NoQuestionsFound);
    }
    if cqs.len() != expected_n {
        diagnostics.push(ParseDiagnostic::CountMismatch {
            expected: expected_n,
            found: cqs.len(),
        });
    }
    Ok(ParsedCqList {
        cqs,
        expected_n,
        diagnostics,
    })
}
