//! Serves generations from a recorded response file.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::cluster::EmbeddingVector;
use crate::confidence::{Judgment, PTrueQuery};
use crate::dataset::QuestionRecord;
use crate::util::temp_key;

use super::{read_responses, GenerationRequest, LayerResponse, ModelInfo, Provider, ProviderError};

type CellKey = (String, u32, u64);

#[derive(Debug, Clone)]
pub struct ReplayProvider {
    name: String,
    /// (question, layer, temperature) -> sample_idx -> text
    cells: HashMap<CellKey, BTreeMap<u32, String>>,
    layer_count: u32,
}

impl ReplayProvider {
    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        Self::from_responses(read_responses(path)?)
    }

    pub fn from_responses(responses: Vec<LayerResponse>) -> Result<Self, ProviderError> {
        let mut cells: HashMap<CellKey, BTreeMap<u32, String>> = HashMap::new();
        let mut layer_count = 0;
        let mut name = None;
        for r in responses {
            layer_count = layer_count.max(r.layer);
            name.get_or_insert_with(|| r.provider_name.clone());
            let key = (r.question_id.clone(), r.layer, temp_key(r.temperature));
            if cells.entry(key).or_default().insert(r.sample_idx, r.text).is_some() {
                return Err(ProviderError::Recording(format!(
                    "duplicate record for question {:?}, layer {}, sample {}, temperature {}",
                    r.question_id, r.layer, r.sample_idx, r.temperature
                )));
            }
        }
        if cells.is_empty() {
            return Err(ProviderError::Recording("recording is empty".into()));
        }
        Ok(Self {
            name: format!("replay:{}", name.unwrap_or_default()),
            cells,
            layer_count,
        })
    }
}

impl Provider for ReplayProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn model_info(&self) -> Result<ModelInfo, ProviderError> {
        Ok(ModelInfo {
            name: self.name.clone(),
            layer_count: self.layer_count,
        })
    }

    fn generate(&self, question: &QuestionRecord, request: &GenerationRequest) -> Result<Vec<String>, ProviderError> {
        let not_recorded = || ProviderError::NotRecorded {
            question_id: question.id.clone(),
            layer: request.layer,
            temperature: request.temperature,
        };
        let cell = self
            .cells
            .get(&(question.id.clone(), request.layer, temp_key(request.temperature)))
            .ok_or_else(not_recorded)?;
        (1..=request.n)
            .map(|j| cell.get(&j).cloned().ok_or_else(not_recorded))
            .collect()
    }

    fn embed(&self, _texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        Err(ProviderError::Unsupported("embedding from a replay recording"))
    }

    fn judge(&self, _query: &PTrueQuery) -> Result<Judgment, ProviderError> {
        Err(ProviderError::Unsupported("P(True) from a replay recording"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(qid: &str, layer: u32, idx: u32, t: f64, text: &str) -> LayerResponse {
        LayerResponse {
            question_id: qid.into(),
            layer,
            sample_idx: idx,
            temperature: t,
            text: text.into(),
            provider_name: "sim".into(),
        }
    }

    fn req(layer: u32, n: u32, t: f64) -> GenerationRequest {
        GenerationRequest {
            prompt: String::new(),
            layer,
            n,
            temperature: t,
            max_tokens: 50,
            seed: None,
        }
    }

    #[test]
    fn replays_verbatim_in_sample_order() {
        let p = ReplayProvider::from_responses(vec![
            rec("q", 2, 2, 0.6, "second"),
            rec("q", 2, 1, 0.6, "first"),
            rec("q", 7, 1, 1.0, "deep"),
        ])
        .unwrap();
        let q = QuestionRecord::new("q", "Q?", vec!["a".into()], "t");
        assert_eq!(p.generate(&q, &req(2, 2, 0.6)).unwrap(), ["first", "second"]);
        assert_eq!(p.model_info().unwrap().layer_count, 7);
        assert!(matches!(p.generate(&q, &req(2, 3, 0.6)), Err(ProviderError::NotRecorded { .. })));
        assert!(matches!(p.generate(&q, &req(2, 1, 1.0)), Err(ProviderError::NotRecorded { .. })));
        assert!(matches!(p.embed(&["x".into()]), Err(ProviderError::Unsupported(_))));
    }

    #[test]
    fn duplicate_tuple_rejected() {
        let dup = vec![rec("q", 1, 1, 0.6, "a"), rec("q", 1, 1, 0.6, "b")];
        assert!(matches!(ReplayProvider::from_responses(dup), Err(ProviderError::Recording(_))));
        assert!(ReplayProvider::from_responses(vec![]).is_err());
    }
}
