//! P(True) self-evaluation per layer.
//!
//! The model at a given layer is shown its own answer and asked whether it is
//! true. A backend either reports the probability of the "(B) True" option
//! directly, or returns sampled single-token judgments which are parsed and
//! counted.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Corpus;
use crate::provider::{LayerResponse, Provider, ProviderError};
use crate::util::SeedMixer;

/// Judgment samples per query when the backend has no option probabilities.
pub const DEFAULT_K: u32 = 20;

#[derive(Debug, Error)]
pub enum ConfidenceError {
    #[error("P(True) prompt needs a non-empty {0}")]
    EmptyInput(&'static str),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("only {parsed} of {k} judgments were parseable")]
    TooFewParseable { parsed: usize, k: usize },
    #[error("backend reported P(True) = {0}, outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("no responses at layer {0}")]
    NoResponses(u32),
    #[error("response refers to unknown question {0:?}")]
    UnknownQuestion(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PTrueQuery {
    pub question: String,
    pub possible_answer: String,
    pub layer: u32,
    pub k: u32,
    /// Distinguishes repeated queries for the same answer in seeded backends.
    #[serde(default)]
    pub nonce: u64,
}

/// What a backend returns for a P(True) query.
#[derive(Debug, Clone, PartialEq)]
pub enum Judgment {
    /// Renormalized probability of the True option.
    Probability(f64),
    /// True-fraction already computed by the backend from its own samples.
    SampledFraction(f64),
    /// Raw single-token judgments to be parsed here.
    Samples(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgmentMode {
    /// Option probability reported by the backend.
    Logit,
    /// Fraction of sampled judgments answering True.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerConfidence {
    pub layer: u32,
    pub mean_p_true: f64,
    pub n_queries: usize,
    pub mode: Option<JudgmentMode>,
}

pub fn render_ptrue_prompt(question: &str, possible_answer: &str) -> Result<String, ConfidenceError> {
    if question.trim().is_empty() {
        return Err(ConfidenceError::EmptyInput("question"));
    }
    if possible_answer.trim().is_empty() {
        return Err(ConfidenceError::EmptyInput("answer"));
    }
    Ok(format!(
        "Question: {question}\n\
         Possible Answer: {possible_answer}\n\
         \n\
         Is the possible answer:\n\
         (A) False\n\
         (B) True\n\
         \n\
         The possible answer is:"
    ))
}

/// Reads the option chosen by a judgment generation: `Some(true)` for B/True,
/// `Some(false)` for A/False, `None` if unparseable.
pub fn parse_judgment(text: &str) -> Option<bool> {
    let token = text.split_whitespace().next()?.to_lowercase();
    let token = token.trim_end_matches([')', '.', ':', ',', ';', '!']);
    match token {
        "b" | "(b" | "true" => Some(true),
        "a" | "(a" | "false" => Some(false),
        _ => None,
    }
}

/// Fraction of parseable judgments that answer True. At least half of `k`
/// must parse.
pub fn fraction_true(samples: &[String], k: usize) -> Result<f64, ConfidenceError> {
    let parsed: Vec<bool> = samples.iter().filter_map(|s| parse_judgment(s)).collect();
    if parsed.is_empty() || parsed.len() * 2 < k {
        return Err(ConfidenceError::TooFewParseable { parsed: parsed.len(), k });
    }
    Ok(parsed.iter().filter(|b| **b).count() as f64 / parsed.len() as f64)
}

/// P(True) for one answer, with the mode that produced it.
pub fn p_true_detailed(query: &PTrueQuery, provider: &dyn Provider) -> Result<(f64, JudgmentMode), ConfidenceError> {
    if query.k == 0 {
        return Err(ConfidenceError::ZeroK);
    }
    render_ptrue_prompt(&query.question, &query.possible_answer)?;
    match provider.judge(query)? {
        Judgment::Probability(p) if (0.0..=1.0).contains(&p) => Ok((p, JudgmentMode::Logit)),
        Judgment::SampledFraction(p) if (0.0..=1.0).contains(&p) => Ok((p, JudgmentMode::Sampled)),
        Judgment::Probability(p) | Judgment::SampledFraction(p) => Err(ConfidenceError::ProbabilityOutOfRange(p)),
        Judgment::Samples(samples) => Ok((fraction_true(&samples, query.k as usize)?, JudgmentMode::Sampled)),
    }
}

pub fn p_true(query: &PTrueQuery, provider: &dyn Provider) -> Result<f64, ConfidenceError> {
    p_true_detailed(query, provider).map(|(p, _)| p)
}

/// Seed nonce for the judgment of one recorded response.
pub fn response_nonce(response: &LayerResponse) -> u64 {
    SeedMixer::new(0)
        .str(&response.question_id)
        .u64(u64::from(response.sample_idx))
        .f64(response.temperature)
        .finish()
}

/// Mean P(True) over every response at `layer`.
pub fn layer_confidence(
    layer: u32,
    responses: &[LayerResponse],
    corpus: &Corpus,
    provider: &dyn Provider,
    k: u32,
) -> Result<LayerConfidence, ConfidenceError> {
    let at_layer: Vec<&LayerResponse> = responses.iter().filter(|r| r.layer == layer).collect();
    if at_layer.is_empty() {
        return Err(ConfidenceError::NoResponses(layer));
    }
    let results: Vec<(f64, JudgmentMode)> = at_layer
        .par_iter()
        .map(|r| {
            let question = corpus
                .get(&r.question_id)
                .ok_or_else(|| ConfidenceError::UnknownQuestion(r.question_id.clone()))?;
            // an empty generation still gets judged; the prompt needs some text
            let answer = if r.text.trim().is_empty() { "(no answer)" } else { r.text.as_str() };
            p_true_detailed(
                &PTrueQuery {
                    question: question.text.clone(),
                    possible_answer: answer.to_string(),
                    layer,
                    k,
                    nonce: response_nonce(r),
                },
                provider,
            )
        })
        .collect::<Result<_, _>>()?;
    let mut values: Vec<f64> = results.iter().map(|(p, _)| *p).collect();
    values.sort_by(f64::total_cmp);
    let mode = results.first().map(|(_, m)| *m);
    Ok(LayerConfidence {
        layer,
        mean_p_true: values.iter().sum::<f64>() / values.len() as f64,
        n_queries: values.len(),
        mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::EmbeddingVector;
    use crate::dataset::QuestionRecord;
    use crate::provider::{GenerationRequest, ModelInfo};
    use std::collections::HashMap;

    /// Backend answering from a fixed table keyed by possible answer.
    struct Table(HashMap<String, Judgment>);

    impl Provider for Table {
        fn name(&self) -> &str {
            "table"
        }
        fn model_info(&self) -> Result<ModelInfo, ProviderError> {
            Ok(ModelInfo { name: "table".into(), layer_count: 4 })
        }
        fn generate(&self, _: &QuestionRecord, _: &GenerationRequest) -> Result<Vec<String>, ProviderError> {
            Err(ProviderError::Unsupported("generate"))
        }
        fn embed(&self, _: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
            Err(ProviderError::Unsupported("embed"))
        }
        fn judge(&self, q: &PTrueQuery) -> Result<Judgment, ProviderError> {
            Ok(self.0[&q.possible_answer].clone())
        }
    }

    fn query(answer: &str, k: u32) -> PTrueQuery {
        PTrueQuery {
            question: "Q?".into(),
            possible_answer: answer.into(),
            layer: 1,
            k,
            nonce: 0,
        }
    }

    fn samples(b: usize, a: usize, junk: usize) -> Judgment {
        let mut v = vec!["B".to_string(); b];
        v.extend(vec!["(A) False".to_string(); a]);
        v.extend(vec!["maybe".to_string(); junk]);
        Judgment::Samples(v)
    }

    #[test]
    fn prompt_matches_template() {
        let p = render_ptrue_prompt("Q1?", "A1").unwrap();
        assert_eq!(
            p,
            "Question: Q1?\nPossible Answer: A1\n\nIs the possible answer:\n(A) False\n(B) True\n\nThe possible answer is:"
        );
        assert!(p.contains("Possible Answer: A1"));
        assert_eq!(p, render_ptrue_prompt("Q1?", "A1").unwrap());
        let multi = render_ptrue_prompt("line one\nline two", "x").unwrap();
        assert!(multi.starts_with("Question: line one\nline two\n"));
        assert!(matches!(render_ptrue_prompt(" ", "x"), Err(ConfidenceError::EmptyInput("question"))));
        assert!(matches!(render_ptrue_prompt("q", ""), Err(ConfidenceError::EmptyInput("answer"))));
    }

    #[test]
    fn judgment_parsing() {
        for yes in ["B", " b", "(B) True", "true.", "TRUE", "B)", "(b"] {
            assert_eq!(parse_judgment(yes), Some(true), "{yes}");
        }
        for no in ["A", "(A) False", "false", "a."] {
            assert_eq!(parse_judgment(no), Some(false), "{no}");
        }
        for junk in ["", "  ", "maybe", "C", "Bee"] {
            assert_eq!(parse_judgment(junk), None, "{junk}");
        }
    }

    #[test]
    fn sampled_fraction() {
        let t = Table(HashMap::from([
            ("fifteen".to_string(), samples(15, 5, 0)),
            ("none".to_string(), samples(0, 20, 0)),
            ("direct".to_string(), Judgment::Probability(0.62)),
            ("junk".to_string(), samples(3, 6, 11)),
            ("bad".to_string(), Judgment::Probability(1.5)),
        ]));
        assert_eq!(p_true(&query("fifteen", 20), &t).unwrap(), 0.75);
        assert_eq!(p_true(&query("none", 20), &t).unwrap(), 0.0);
        assert_eq!(p_true_detailed(&query("direct", 20), &t).unwrap(), (0.62, JudgmentMode::Logit));
        assert!(matches!(
            p_true(&query("junk", 20), &t),
            Err(ConfidenceError::TooFewParseable { parsed: 9, k: 20 })
        ));
        assert!(matches!(p_true(&query("bad", 20), &t), Err(ConfidenceError::ProbabilityOutOfRange(_))));
        assert!(matches!(p_true(&query("none", 0), &t), Err(ConfidenceError::ZeroK)));
    }

    #[test]
    fn unparseable_excluded_from_denominator() {
        // 12 of 20 parse, 9 of them True
        let v: Vec<String> = ["B"; 9].iter().chain(["A"; 3].iter()).chain(["?"; 8].iter()).map(|s| s.to_string()).collect();
        assert_eq!(fraction_true(&v, 20).unwrap(), 0.75);
    }

    fn response(qid: &str, layer: u32, idx: u32, text: &str) -> LayerResponse {
        LayerResponse {
            question_id: qid.into(),
            layer,
            sample_idx: idx,
            temperature: 1.0,
            text: text.into(),
            provider_name: "t".into(),
        }
    }

    fn corpus() -> Corpus {
        Corpus {
            questions: vec![QuestionRecord::new("q", "Q?", vec!["x".into()], "t")],
            source_path: String::new(),
            min_answers_applied: 1,
            filtered_out: 0,
        }
    }

    #[test]
    fn layer_mean() {
        let t = Table(HashMap::from([
            ("low".to_string(), Judgment::Probability(0.4)),
            ("high".to_string(), Judgment::Probability(0.8)),
        ]));
        let rs = vec![response("q", 2, 1, "low"), response("q", 2, 2, "high"), response("q", 3, 1, "low")];
        let c = layer_confidence(2, &rs, &corpus(), &t, 20).unwrap();
        assert!((c.mean_p_true - 0.6).abs() < 1e-12);
        assert_eq!(c.n_queries, 2);
        assert_eq!(c.mode, Some(JudgmentMode::Logit));

        let same = vec![response("q", 1, 1, "high"), response("q", 1, 2, "high")];
        assert_eq!(layer_confidence(1, &same, &corpus(), &t, 20).unwrap().mean_p_true, 0.8);

        let mut rev = rs.clone();
        rev.reverse();
        assert_eq!(
            layer_confidence(2, &rev, &corpus(), &t, 20).unwrap(),
            layer_confidence(2, &rs, &corpus(), &t, 20).unwrap()
        );
        assert!(matches!(layer_confidence(9, &rs, &corpus(), &t, 20), Err(ConfidenceError::NoResponses(9))));
        let stray = vec![response("other", 2, 1, "low")];
        assert!(matches!(
            layer_confidence(2, &stray, &corpus(), &t, 20),
            Err(ConfidenceError::UnknownQuestion(_))
        ));
    }
}
