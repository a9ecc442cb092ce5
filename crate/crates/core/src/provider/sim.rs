//! Provider backed by the synthetic layer model.

use crate::cluster::{EmbeddingVector, FallbackEmbedder, Embedder};
use crate::confidence::{Judgment, PTrueQuery};
use crate::dataset::QuestionRecord;
use crate::simgen::{sim_generate, sim_judgments, PTrueMode, SimConfig, SimError};

use super::{GenerationRequest, ModelInfo, Provider, ProviderError};

#[derive(Debug, Clone)]
pub struct SimProvider {
    config: SimConfig,
    embedder: FallbackEmbedder,
}

impl SimProvider {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        Ok(Self {
            config,
            embedder: FallbackEmbedder::default(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }
}

fn sim_err(e: SimError) -> ProviderError {
    match e {
        SimError::MissingProfile(layer) => ProviderError::LayerOutOfRange {
            layer,
            layer_count: 0,
        },
        other => ProviderError::Backend(other.to_string()),
    }
}

impl Provider for SimProvider {
    fn name(&self) -> &str {
        "sim"
    }

    fn model_info(&self) -> Result<ModelInfo, ProviderError> {
        Ok(ModelInfo {
            name: "sim".into(),
            layer_count: self.config.num_layers() as u32,
        })
    }

    fn generate(&self, question: &QuestionRecord, request: &GenerationRequest) -> Result<Vec<String>, ProviderError> {
        request.validate(self.config.num_layers() as u32)?;
        sim_generate(question, request, &self.config).map_err(sim_err)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        self.embedder
            .embed(texts)
            .map_err(|e| ProviderError::InvalidRequest(e.to_string()))
    }

    fn judge(&self, query: &PTrueQuery) -> Result<Judgment, ProviderError> {
        match self.config.ptrue_mode {
            PTrueMode::Probability => self
                .config
                .profile(query.layer)
                .map(|p| Judgment::Probability(p.judgment_probability()))
                .map_err(sim_err),
            PTrueMode::Sampled => sim_judgments(query, &self.config).map(Judgment::Samples).map_err(sim_err),
        }
    }
}
