//! HTTP client for the inference sidecar.
//!
//! Endpoints (JSON bodies):
//!
//! | method | path           | request                                         | response                  |
//! |--------|----------------|-------------------------------------------------|---------------------------|
//! | POST   | `/v1/generate` | `{prompt, layer, n, temperature, max_tokens, seed?}` | `{texts}`            |
//! | POST   | `/v1/embed`    | `{texts}`                                       | `{vectors, dim}`          |
//! | POST   | `/v1/ptrue`    | `{question, answer, layer, k}`                  | `{p_true, mode}`          |
//! | GET    | `/v1/model`    |                                                 | `{name, num_layers}`      |
//!
//! 5xx responses and transport failures are retryable; 4xx are not.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::cluster::EmbeddingVector;
use crate::confidence::{Judgment, PTrueQuery};
use crate::dataset::QuestionRecord;

use super::{GenerationRequest, ModelInfo, Provider, ProviderError};

/// Environment variable overriding the configured sidecar URL.
pub const SIDECAR_URL_ENV: &str = "LAYERWISE_SIDECAR_URL";

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateBody {
    pub texts: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedRequestBody {
    pub texts: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedBody {
    pub vectors: Vec<Vec<f64>>,
    pub dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PTrueRequestBody {
    pub question: String,
    pub answer: String,
    pub layer: u32,
    pub k: u32,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PTrueBody {
    pub p_true: f64,
    pub mode: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelBody {
    pub name: String,
    pub num_layers: u32,
}

pub struct SidecarProvider {
    base_url: String,
    agent: ureq::Agent,
    concurrency: usize,
}

impl SidecarProvider {
    pub fn new(base_url: impl Into<String>, timeout: Duration, concurrency: usize) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent,
            concurrency: concurrency.max(1),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base_url)
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(&self, path: &str, body: &B) -> Result<R, ProviderError> {
        let resp = self.agent.post(&self.url(path)).send_json(body).map_err(map_ureq)?;
        resp.into_json()
            .map_err(|e| ProviderError::Protocol(format!("{path}: undecodable response: {e}")))
    }
}

fn map_ureq(err: ureq::Error) -> ProviderError {
    match err {
        ureq::Error::Status(code, resp) => {
            let body = resp.into_string().unwrap_or_default();
            if code >= 500 {
                ProviderError::Unreachable(format!("status {code}: {body}"))
            } else {
                ProviderError::Backend(format!("status {code}: {body}"))
            }
        }
        ureq::Error::Transport(t) => ProviderError::Unreachable(t.to_string()),
    }
}

impl Provider for SidecarProvider {
    fn name(&self) -> &str {
        "sidecar"
    }

    fn model_info(&self) -> Result<ModelInfo, ProviderError> {
        let body: ModelBody = self
            .agent
            .get(&self.url("/v1/model"))
            .call()
            .map_err(map_ureq)?
            .into_json()
            .map_err(|e| ProviderError::Protocol(format!("/v1/model: {e}")))?;
        if body.num_layers < 2 {
            return Err(ProviderError::Protocol(format!(
                "model reports {} layers, need at least 2",
                body.num_layers
            )));
        }
        Ok(ModelInfo {
            name: body.name,
            layer_count: body.num_layers,
        })
    }

    fn generate(&self, _question: &QuestionRecord, request: &GenerationRequest) -> Result<Vec<String>, ProviderError> {
        let body: GenerateBody = self.post("/v1/generate", request)?;
        Ok(body.texts)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let body: EmbedBody = self.post(
            "/v1/embed",
            &EmbedRequestBody {
                texts: texts.to_vec(),
            },
        )?;
        if body.vectors.len() != texts.len() {
            return Err(ProviderError::Protocol(format!(
                "/v1/embed returned {} vectors for {} texts",
                body.vectors.len(),
                texts.len()
            )));
        }
        body.vectors
            .into_iter()
            .zip(texts)
            .map(|(v, t)| {
                if v.len() != body.dim {
                    return Err(ProviderError::Protocol(format!(
                        "/v1/embed vector of length {} in a dim-{} reply",
                        v.len(),
                        body.dim
                    )));
                }
                // rows arrive unit-norm to about 1e-5; renormalize to tighten
                EmbeddingVector::normalized(v, t.clone()).map_err(|e| ProviderError::Protocol(e.to_string()))
            })
            .collect()
    }

    fn judge(&self, query: &PTrueQuery) -> Result<Judgment, ProviderError> {
        let body: PTrueBody = self.post(
            "/v1/ptrue",
            &PTrueRequestBody {
                question: query.question.clone(),
                answer: query.possible_answer.clone(),
                layer: query.layer,
                k: query.k,
            },
        )?;
        match body.mode.as_str() {
            "logit" => Ok(Judgment::Probability(body.p_true)),
            "sampled" => Ok(Judgment::SampledFraction(body.p_true)),
            other => Err(ProviderError::Protocol(format!("/v1/ptrue: unknown mode {other:?}"))),
        }
    }

    fn max_concurrency(&self) -> Option<usize> {
        Some(self.concurrency)
    }
}
