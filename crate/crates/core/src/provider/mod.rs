//! Backends that produce per-layer generations, embeddings and P(True)
//! judgments.
//!
//! Three implementations share the [`Provider`] contract:
//!
//! - [`http::SidecarProvider`] talks to an inference sidecar over HTTP
//! - [`replay::ReplayProvider`] serves texts from a recorded response file
//! - [`sim::SimProvider`] wraps the synthetic layer model
//!
//! The engine never sees how a backend exits early; it only consumes the
//! texts. [`generate_checked`] enforces the count and layer-range contract for
//! every backend, and [`Retrying`] adds the retry policy for transient
//! failures.

pub mod http;
pub mod replay;
pub mod sim;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{EmbedError, Embedder, EmbeddingVector};
use crate::confidence::{Judgment, PTrueQuery};
use crate::dataset::QuestionRecord;

pub use http::SidecarProvider;
pub use replay::ReplayProvider;
pub use sim::SimProvider;

/// Default QA prompt; `{question}` is substituted.
pub const DEFAULT_PROMPT_TEMPLATE: &str = "Answer the following question with a short answer.\nQuestion: {question}\nAnswer:";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("layer {layer} outside 1..={layer_count}")]
    LayerOutOfRange { layer: u32, layer_count: u32 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("no recorded responses for question {question_id:?}, layer {layer}, temperature {temperature}")]
    NotRecorded {
        question_id: String,
        layer: u32,
        temperature: f64,
    },
    #[error("{0} is not supported by this provider")]
    Unsupported(&'static str),
    #[error("cannot load recording: {0}")]
    Recording(String),
}

impl ProviderError {
    /// Only transport-level failures are worth retrying.
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Unreachable(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub layer: u32,
    pub n: u32,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl GenerationRequest {
    pub fn validate(&self, layer_count: u32) -> Result<(), ProviderError> {
        if self.layer < 1 || self.layer > layer_count {
            return Err(ProviderError::LayerOutOfRange {
                layer: self.layer,
                layer_count,
            });
        }
        if self.n == 0 {
            return Err(ProviderError::InvalidRequest("n must be at least 1".into()));
        }
        if self.max_tokens == 0 {
            return Err(ProviderError::InvalidRequest("max_tokens must be at least 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Fills the prompt template for one question.
pub fn render_prompt(template: &str, question: &str) -> String {
    template.replace("{question}", question)
}

/// One sampled generation, as stored in response files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerResponse {
    pub question_id: String,
    pub layer: u32,
    pub sample_idx: u32,
    pub temperature: f64,
    pub text: String,
    #[serde(rename = "provider")]
    pub provider_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub name: String,
    pub layer_count: u32,
}

pub trait Provider: Send + Sync {
    fn name(&self) -> &str;

    fn model_info(&self) -> Result<ModelInfo, ProviderError>;

    /// `request.n` texts for sample indices `1..=n`.
    fn generate(&self, question: &QuestionRecord, request: &GenerationRequest) -> Result<Vec<String>, ProviderError>;

    /// Unit-norm vectors, one per text.
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;

    fn judge(&self, query: &PTrueQuery) -> Result<Judgment, ProviderError>;

    /// Upper bound on concurrent calls; `Some(1)` declares the backend serial.
    fn max_concurrency(&self) -> Option<usize> {
        None
    }
}

impl<P: Provider + ?Sized> Provider for Arc<P> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn model_info(&self) -> Result<ModelInfo, ProviderError> {
        (**self).model_info()
    }
    fn generate(&self, question: &QuestionRecord, request: &GenerationRequest) -> Result<Vec<String>, ProviderError> {
        (**self).generate(question, request)
    }
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        (**self).embed(texts)
    }
    fn judge(&self, query: &PTrueQuery) -> Result<Judgment, ProviderError> {
        (**self).judge(query)
    }
    fn max_concurrency(&self) -> Option<usize> {
        (**self).max_concurrency()
    }
}

/// Validates the request against the model and the reply against the request.
pub fn generate_checked(
    provider: &dyn Provider,
    model: &ModelInfo,
    question: &QuestionRecord,
    request: &GenerationRequest,
) -> Result<Vec<String>, ProviderError> {
    request.validate(model.layer_count)?;
    let texts = provider.generate(question, request)?;
    if texts.len() != request.n as usize {
        return Err(ProviderError::Protocol(format!(
            "asked for {} texts at layer {}, got {}",
            request.n,
            request.layer,
            texts.len()
        )));
    }
    Ok(texts)
}

/// Exponential backoff for retryable failures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn run<T>(&self, what: &str, mut op: impl FnMut() -> Result<T, ProviderError>) -> Result<T, ProviderError> {
        let mut delay = self.initial_backoff;
        let mut attempt = 0;
        loop {
            match op() {
                Err(e) if e.is_retryable() && attempt < self.max_retries => {
                    attempt += 1;
                    tracing::warn!(%e, attempt, "{what} failed, retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay *= 2;
                }
                other => return other,
            }
        }
    }
}

/// Wraps a provider with a [`RetryPolicy`].
pub struct Retrying<P> {
    inner: P,
    policy: RetryPolicy,
}

impl<P: Provider> Retrying<P> {
    pub fn new(inner: P, policy: RetryPolicy) -> Self {
        Self { inner, policy }
    }
}

impl<P: Provider> Provider for Retrying<P> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn model_info(&self) -> Result<ModelInfo, ProviderError> {
        self.policy.run("model_info", || self.inner.model_info())
    }
    fn generate(&self, question: &QuestionRecord, request: &GenerationRequest) -> Result<Vec<String>, ProviderError> {
        self.policy.run("generate", || self.inner.generate(question, request))
    }
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        self.policy.run("embed", || self.inner.embed(texts))
    }
    fn judge(&self, query: &PTrueQuery) -> Result<Judgment, ProviderError> {
        self.policy.run("ptrue", || self.inner.judge(query))
    }
    fn max_concurrency(&self) -> Option<usize> {
        self.inner.max_concurrency()
    }
}

/// Uses a provider's `embed` as the clustering encoder.
pub struct ProviderEmbedder<P>(pub P);

impl<P: Provider> Embedder for ProviderEmbedder<P> {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        if let Some(t) = texts.iter().find(|t| t.trim().is_empty()) {
            return Err(EmbedError::EmptyText(t.clone()));
        }
        let vectors = self.0.embed(texts).map_err(|e| EmbedError::Backend(e.to_string()))?;
        if vectors.len() != texts.len() {
            return Err(EmbedError::CountMismatch {
                expected: texts.len(),
                got: vectors.len(),
            });
        }
        Ok(vectors)
    }
}

pub fn read_responses(path: &Path) -> Result<Vec<LayerResponse>, ProviderError> {
    let file = File::open(path).map_err(|e| ProviderError::Recording(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ProviderError::Recording(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LayerResponse = serde_json::from_str(&line)
            .map_err(|e| ProviderError::Recording(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_responses(path: &Path, responses: &[LayerResponse]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in responses {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}
