//! Language-model access: chat generation, True/False scoring and embeddings.
//!
//! Every backend implements [`LlmBackend`]. [`LlmClient`] wraps a backend with
//! the behavior callers rely on: retries with exponential backoff, a shared
//! concurrency limit, call counters and an optional response cache.

mod cache;
mod http;
mod stub;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::ResponseCache;
pub use http::HttpBackend;
pub use stub::{hashed_embedding, StubBackend, StubEntry, StubScript};

use crate::util;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub max_tokens: u32,
    pub temperature: f64,
    pub model_id: String,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        Self {
            messages,
            max_tokens: 512,
            temperature: 0.0,
            model_id: String::new(),
        }
    }

    pub fn single_user(content: impl Into<String>) -> Self {
        Self::new(vec![ChatMessage::user(content)])
    }

    /// Checks the message-shape invariant: at least one user message, and
    /// strictly alternating user/assistant turns after an optional leading
    /// system message.
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(LlmError::InvalidRequest("temperature must be >= 0".into()));
        }
        let turns = match self.messages.first() {
            Some(m) if m.role == Role::System => &self.messages[1..],
            _ => &self.messages[..],
        };
        if !turns.iter().any(|m| m.role == Role::User) {
            return Err(LlmError::InvalidRequest("request has no user message".into()));
        }
        for (i, m) in turns.iter().enumerate() {
            let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
            if m.role != expected {
                return Err(LlmError::InvalidRequest(format!(
                    "message {i} has role {:?}, expected {:?}",
                    m.role, expected
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 over the message list only. Scripted stubs are keyed by it.
    pub fn prompt_hash(&self) -> String {
        prompt_hash(&self.messages)
    }
}

pub fn prompt_hash(messages: &[ChatMessage]) -> String {
    util::sha256_hex(serde_json::to_vec(messages).expect("messages serialize"))
}

/// Probability mass the verifier put on one label's surface variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceScore {
    pub label: String,
    pub probability_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenProb {
    pub token: String,
    pub probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Stub,
}

fn default_api_key_env() -> String {
    "OPENAI_API_KEY".into()
}
fn default_timeout_secs() -> f64 {
    60.0
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    1000
}
fn default_batch() -> usize {
    32
}
fn default_true() -> bool {
    true
}
fn default_top_logprobs() -> u32 {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default)]
    pub model_id: String,
    /// Name of the environment variable holding the API key. Keys never live
    /// in config files.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub retry_backoff_ms: u64,
    #[serde(default = "default_batch")]
    pub embed_batch_size: usize,
    /// Fall back to parsing a short completion when the backend returns no
    /// token probabilities.
    #[serde(default = "default_true")]
    pub logprob_fallback: bool,
    #[serde(default = "default_top_logprobs")]
    pub top_logprobs: u32,
    /// Stub only: path of the JSON script.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    /// Stub only: answer unscripted embedding requests with a hashed
    /// bag-of-words vector of this dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hashed_embedding_dim: Option<usize>,
}

impl BackendSpec {
    pub fn stub(script: Option<PathBuf>) -> Self {
        Self {
            kind: BackendKind::Stub,
            base_url: None,
            model_id: "stub".into(),
            api_key_env: default_api_key_env(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            retry_backoff_ms: default_backoff_ms(),
            embed_batch_size: default_batch(),
            logprob_fallback: true,
            top_logprobs: default_top_logprobs(),
            script,
            hashed_embedding_dim: None,
        }
    }

    pub fn http(base_url: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Http,
            base_url: Some(base_url.into()),
            model_id: model_id.into(),
            script: None,
            ..Self::stub(None)
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        match self.kind {
            BackendKind::Http if self.base_url.is_none() => {
                Err(LlmError::InvalidRequest("http backend requires base_url".into()))
            }
            _ if self.embed_batch_size == 0 => {
                Err(LlmError::InvalidRequest("embed_batch_size must be >= 1".into()))
            }
            _ if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 => {
                Err(LlmError::InvalidRequest("timeout_secs must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("stub has no scripted response for prompt {0}")]
    Unscripted(String),
    #[error("verdict completion matched neither label set: {0:?}")]
    UnparseableVerdict(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend does not support {0}")]
    Unsupported(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<LlmError> },
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        match self {
            LlmError::Transport(_) | LlmError::Timeout => true,
            LlmError::Status { status, .. } => *status == 429 || (500..600).contains(status),
            _ => false,
        }
    }
}

/// One language-model backend. Implementations must be shareable across threads.
pub trait LlmBackend: Send + Sync {
    fn generate(&self, request: &ChatRequest) -> Result<String, LlmError>;

    /// Token distribution at the first content position of the completion
    /// (after an `Answer:` prefix, if the model emits one). `Ok(None)` means
    /// the backend cannot report probabilities for this request.
    fn first_token_distribution(
        &self,
        request: &ChatRequest,
    ) -> Result<Option<Vec<TokenProb>>, LlmError>;

    /// Raw (not yet normalized) embedding per input text.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, LlmError>;

    /// Stable identity used in cache keys.
    fn identity(&self) -> String;
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

pub struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut n = self.permits.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
        SemaphoreGuard { sem: self }
    }
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.sem.permits.lock().unwrap() += 1;
        self.sem.cv.notify_one();
    }
}

#[derive(Debug, Default)]
struct Counters {
    generate: AtomicU64,
    score: AtomicU64,
    embed: AtomicU64,
    cache_hits: AtomicU64,
    failures: AtomicU64,
}

/// Snapshot of calls that reached the backend (cache hits excluded).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    pub generate: u64,
    pub score: u64,
    pub embed: u64,
    pub cache_hits: u64,
    pub failures: u64,
}

impl CallCounts {
    pub fn total(&self) -> u64 {
        self.generate + self.score + self.embed
    }
}

impl std::ops::Add for CallCounts {
    type Output = CallCounts;
    fn add(self, o: CallCounts) -> CallCounts {
        CallCounts {
            generate: self.generate + o.generate,
            score: self.score + o.score,
            embed: self.embed + o.embed,
            cache_hits: self.cache_hits + o.cache_hits,
            failures: self.failures + o.failures,
        }
    }
}

pub const DEFAULT_POSITIVE_VARIANTS: [&str; 3] = ["True", "true", "TRUE"];
pub const DEFAULT_NEGATIVE_VARIANTS: [&str; 3] = ["False", "false", "FALSE"];

#[derive(Clone)]
pub struct LlmClient {
    backend: Arc<dyn LlmBackend>,
    max_retries: u32,
    backoff: Duration,
    batch_size: usize,
    logprob_fallback: bool,
    limiter: Arc<Semaphore>,
    counters: Arc<Counters>,
    cache: Option<Arc<ResponseCache>>,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient")
            .field("backend", &self.backend.identity())
            .field("max_retries", &self.max_retries)
            .finish()
    }
}

impl LlmClient {
    /// Builds the backend described by `spec`.
    pub fn from_spec(spec: &BackendSpec, limiter: Arc<Semaphore>) -> Result<Self, LlmError> {
        spec.validate()?;
        let backend: Arc<dyn LlmBackend> = match spec.kind {
            BackendKind::Stub => Arc::new(StubBackend::from_spec(spec)?),
            BackendKind::Http => Arc::new(HttpBackend::from_spec(spec)?),
        };
        Ok(Self::with_backend(backend, spec, limiter))
    }

    pub fn with_backend(
        backend: Arc<dyn LlmBackend>,
        spec: &BackendSpec,
        limiter: Arc<Semaphore>,
    ) -> Self {
        Self {
            backend,
            max_retries: spec.max_retries,
            backoff: Duration::from_millis(spec.retry_backoff_ms),
            batch_size: spec.embed_batch_size.max(1),
            logprob_fallback: spec.logprob_fallback,
            limiter,
            counters: Arc::new(Counters::default()),
            cache: None,
        }
    }

    /// Shorthand for tests and tools: stub backend, default limits.
    pub fn stub(script: StubScript) -> Self {
        let spec = BackendSpec::stub(None);
        Self::with_backend(
            Arc::new(StubBackend::new(script, None)),
            &spec,
            Arc::new(Semaphore::new(8)),
        )
    }

    pub fn with_cache(mut self, cache: Option<Arc<ResponseCache>>) -> Self {
        self.cache = cache;
        self
    }

    pub fn identity(&self) -> String {
        self.backend.identity()
    }

    pub fn counts(&self) -> CallCounts {
        CallCounts {
            generate: self.counters.generate.load(Ordering::Relaxed),
            score: self.counters.score.load(Ordering::Relaxed),
            embed: self.counters.embed.load(Ordering::Relaxed),
            cache_hits: self.counters.cache_hits.load(Ordering::Relaxed),
            failures: self.counters.failures.load(Ordering::Relaxed),
        }
    }

    fn with_retries<T>(&self, mut op: impl FnMut() -> Result<T, LlmError>) -> Result<T, LlmError> {
        let mut attempt = 0u32;
        loop {
            let result = {
                let _permit = self.limiter.acquire();
                op()
            };
            match result {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < self.max_retries => {
                    let wait = self.backoff * 2u32.saturating_pow(attempt);
                    tracing::warn!(error = %e, attempt, ?wait, "retrying backend call");
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                Err(e) => {
                    self.counters.failures.fetch_add(1, Ordering::Relaxed);
                    if attempt > 0 {
                        return Err(LlmError::RetriesExhausted {
                            attempts: attempt + 1,
                            last: Box::new(e),
                        });
                    }
                    return Err(e);
                }
            }
        }
    }

    fn cache_key(&self, op: &str, request: &ChatRequest) -> String {
        let body = serde_json::to_string(request).expect("request serializes");
        util::sha256_hex(format!("{}\u{1f}{op}\u{1f}{body}", self.backend.identity()))
    }

    pub fn generate(&self, request: &ChatRequest) -> Result<String, LlmError> {
        request.validate()?;
        let key = self.cache_key("generate", request);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get_text(&key)) {
            self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit);
        }
        self.counters.generate.fetch_add(1, Ordering::Relaxed);
        let text = self.with_retries(|| self.backend.generate(request))?;
        if let Some(cache) = &self.cache {
            cache.put_text(&key, &text);
        }
        Ok(text)
    }

    /// Like [`generate`](Self::generate) but never reads the response cache.
    pub fn generate_fresh(&self, request: &ChatRequest) -> Result<String, LlmError> {
        request.validate()?;
        self.counters.generate.fetch_add(1, Ordering::Relaxed);
        self.with_retries(|| self.backend.generate(request))
    }

    fn distribution(&self, request: &ChatRequest) -> Result<Option<Vec<TokenProb>>, LlmError> {
        let key = self.cache_key("distribution", request);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get_distribution(&key)) {
            self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit);
        }
        self.counters.score.fetch_add(1, Ordering::Relaxed);
        let dist = self.with_retries(|| self.backend.first_token_distribution(request))?;
        if let Some(cache) = &self.cache {
            cache.put_distribution(&key, &dist);
        }
        Ok(dist)
    }

    /// Returns the probability mass on the positive and negative label
    /// variants at the first content position of the completion.
    ///
    /// Backends without probabilities fall back to one short completion:
    /// whichever variant set appears first in it receives mass 1.0.
    pub fn score_binary(
        &self,
        request: &ChatRequest,
        positive_variants: &[String],
        negative_variants: &[String],
    ) -> Result<(ChoiceScore, ChoiceScore), LlmError> {
        request.validate()?;
        let positive_label = label_of(positive_variants, "True");
        let negative_label = label_of(negative_variants, "False");
        let (p_plus, p_minus) = match self.distribution(request)? {
            Some(dist) => (
                variant_mass(&dist, positive_variants),
                variant_mass(&dist, negative_variants),
            ),
            None if self.logprob_fallback => {
                let text = self.generate(request)?;
                fallback_masses(&text, positive_variants, negative_variants)?
            }
            None => {
                return Err(LlmError::Unsupported(
                    "token probabilities (fallback disabled)".into(),
                ))
            }
        };
        Ok((
            ChoiceScore {
                label: positive_label,
                probability_mass: p_plus,
            },
            ChoiceScore {
                label: negative_label,
                probability_mass: p_minus,
            },
        ))
    }

    /// Embeds `texts` in configured batch sizes; every returned vector is unit
    /// length (zero vectors stay zero) and all share one dimension.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, LlmError> {
        let mut out = Vec::with_capacity(texts.len());
        let mut dim: Option<usize> = None;
        for batch in texts.chunks(self.batch_size) {
            self.counters.embed.fetch_add(1, Ordering::Relaxed);
            let vectors = self.with_retries(|| self.backend.embed(batch))?;
            if vectors.len() != batch.len() {
                return Err(LlmError::Protocol(format!(
                    "asked for {} embeddings, got {}",
                    batch.len(),
                    vectors.len()
                )));
            }
            for mut v in vectors {
                let expected = *dim.get_or_insert(v.len());
                if v.len() != expected {
                    return Err(LlmError::DimensionMismatch {
                        expected,
                        got: v.len(),
                    });
                }
                normalize(&mut v);
                out.push(v);
            }
        }
        Ok(out)
    }
}

fn label_of(variants: &[String], default: &str) -> String {
    variants
        .first()
        .cloned()
        .unwrap_or_else(|| default.to_string())
}

/// Sums probabilities of tokens whose trimmed text is one of `variants`.
fn variant_mass(dist: &[TokenProb], variants: &[String]) -> f64 {
    let mass: f64 = dist
        .iter()
        .filter(|t| variants.iter().any(|v| v == t.token.trim()))
        .map(|t| t.probability)
        .sum();
    mass.clamp(0.0, 1.0)
}

/// Strips a leading `Answer:` and finds which variant set occurs first.
pub(crate) fn fallback_masses(
    completion: &str,
    positive: &[String],
    negative: &[String],
) -> Result<(f64, f64), LlmError> {
    let body = strip_answer_prefix(completion.trim());
    let first = |set: &[String]| set.iter().filter_map(|v| body.find(v.as_str())).min();
    match (first(positive), first(negative)) {
        (Some(p), Some(n)) if p <= n => Ok((1.0, 0.0)),
        (Some(_), Some(_)) => Ok((0.0, 1.0)),
        (Some(_), None) => Ok((1.0, 0.0)),
        (None, Some(_)) => Ok((0.0, 1.0)),
        (None, None) => Err(LlmError::UnparseableVerdict(completion.to_string())),
    }
}

pub(crate) fn strip_answer_prefix(text: &str) -> &str {
    const PREFIX: &str = "answer:";
    match text.get(..PREFIX.len()) {
        Some(head) if head.eq_ignore_ascii_case(PREFIX) => text[PREFIX.len()..].trim_start(),
        _ => text,
    }
}

pub(crate) fn normalize(v: &mut [f32]) {
    let norm = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x = (*x as f64 / norm) as f32;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn pos() -> Vec<String> {
        strings(&DEFAULT_POSITIVE_VARIANTS)
    }

    fn neg() -> Vec<String> {
        strings(&DEFAULT_NEGATIVE_VARIANTS)
    }

    #[test]
    fn request_validation_enforces_alternation() {
        assert!(ChatRequest::single_user("hi").validate().is_ok());
        let ok = ChatRequest::new(vec![
            ChatMessage::system("s"),
            ChatMessage::user("u"),
            ChatMessage::assistant("a"),
            ChatMessage::user("u2"),
        ]);
        assert!(ok.validate().is_ok());
        let two_users = ChatRequest::new(vec![ChatMessage::user("a"), ChatMessage::user("b")]);
        assert!(two_users.validate().is_err());
        let no_user = ChatRequest::new(vec![ChatMessage::system("s")]);
        assert!(no_user.validate().is_err());
    }

    #[test]
    fn stub_generate_echoes_script() {
        let req = ChatRequest::single_user("list things");
        let mut script = StubScript::default();
        script.insert_text(&req, "* A\n* B");
        let client = LlmClient::stub(script);
        assert_eq!(client.generate(&req).unwrap(), "* A\n* B");
        // deterministic at temperature 0
        assert_eq!(client.generate(&req).unwrap(), client.generate(&req).unwrap());
        assert_eq!(client.counts().generate, 3);
    }

    #[test]
    fn score_binary_passes_stub_distribution_through() {
        let req = ChatRequest::single_user("verify");
        let mut script = StubScript::default();
        script.insert_distribution(&req, &[("True", 0.7), ("False", 0.2)]);
        let client = LlmClient::stub(script);
        let (p, n) = client.score_binary(&req, &pos(), &neg()).unwrap();
        assert_eq!(p.probability_mass, 0.7);
        assert_eq!(n.probability_mass, 0.2);
        assert_eq!(p.label, "True");
    }

    #[test]
    fn score_binary_sums_over_variants() {
        let req = ChatRequest::single_user("verify");
        let mut script = StubScript::default();
        script.insert_distribution(&req, &[("True", 0.4), ("true", 0.3), ("False", 0.2)]);
        let client = LlmClient::stub(script);
        let (p, n) = client
            .score_binary(&req, &strings(&["True", "true"]), &neg())
            .unwrap();
        assert!((p.probability_mass - 0.7).abs() < 1e-12);
        assert!((n.probability_mass - 0.2).abs() < 1e-12);
    }

    #[test]
    fn score_binary_falls_back_to_completion_text() {
        let req = ChatRequest::single_user("verify");
        let mut script = StubScript::default();
        script.insert_text(&req, "Answer: True");
        let client = LlmClient::stub(script);
        let (p, n) = client.score_binary(&req, &pos(), &neg()).unwrap();
        assert_eq!((p.probability_mass, n.probability_mass), (1.0, 0.0));
    }

    #[test]
    fn fallback_rules() {
        assert_eq!(fallback_masses("False.", &pos(), &neg()).unwrap(), (0.0, 1.0));
        assert_eq!(
            fallback_masses("answer: false, not true", &pos(), &neg()).unwrap(),
            (0.0, 1.0)
        );
        assert!(matches!(
            fallback_masses("Maybe", &pos(), &neg()),
            Err(LlmError::UnparseableVerdict(_))
        ));
    }

    #[test]
    fn embed_normalizes_and_preserves_order() {
        let mut script = StubScript::default();
        script.insert_embedding("a", vec![1.0, 0.0]);
        script.insert_embedding("b", vec![0.0, 1.0]);
        script.insert_embedding("c", vec![3.0, 4.0]);
        let client = LlmClient::stub(script);
        let out = client.embed(&strings(&["a", "b", "c"])).unwrap();
        assert_eq!(out, vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]]);
        assert!(client.embed(&[]).unwrap().is_empty());
    }

    #[test]
    fn embed_rejects_inconsistent_dimensions() {
        let mut script = StubScript::default();
        script.insert_embedding("a", vec![1.0, 0.0]);
        script.insert_embedding("b", vec![0.0, 1.0, 0.0]);
        let client = LlmClient::stub(script);
        assert!(matches!(
            client.embed(&strings(&["a", "b"])),
            Err(LlmError::DimensionMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn unscripted_prompt_is_an_error() {
        let client = LlmClient::stub(StubScript::default());
        assert!(matches!(
            client.generate(&ChatRequest::single_user("?")),
            Err(LlmError::Unscripted(_))
        ));
        assert_eq!(client.counts().failures, 1);
    }

    #[test]
    fn retryable_statuses() {
        let s = |status| LlmError::Status {
            status,
            body: String::new(),
        };
        assert!(s(429).is_retryable());
        assert!(s(503).is_retryable());
        assert!(!s(400).is_retryable());
        assert!(LlmError::Timeout.is_retryable());
        assert!(!LlmError::Unscripted("x".into()).is_retryable());
    }

    #[test]
    fn http_spec_requires_base_url() {
        let mut spec = BackendSpec::http("http://localhost", "m");
        assert!(spec.validate().is_ok());
        spec.base_url = None;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn semaphore_bounds_concurrency() {
        let sem = Arc::new(Semaphore::new(2));
        let live = Arc::new(AtomicU64::new(0));
        let peak = Arc::new(AtomicU64::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (sem, live, peak) = (sem.clone(), live.clone(), peak.clone());
                std::thread::spawn(move || {
                    let _g = sem.acquire();
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    live.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
