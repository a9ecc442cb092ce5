//! Containment-based correctness judging.
//!
//! A response is correct when some gold answer, after normalization, occurs in
//! the normalized response on whole-token boundaries. Everything else,
//! including an empty generation, counts as a hallucination.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;
use unicode_properties::{GeneralCategoryGroup, UnicodeGeneralCategory};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum JudgeError {
    #[error("gold answer list is empty")]
    NoGoldAnswers,
    #[error("no labels to summarize")]
    NoLabels,
    #[error("label for layer {found} mixed into summary of layer {expected}")]
    MixedLayers { expected: u32, found: u32 },
}

/// Verdict for one sampled response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectnessLabel {
    pub question_id: String,
    pub layer: u32,
    pub sample_idx: u32,
    pub correct: bool,
    pub matched_answer: Option<String>,
}

/// Per-layer error count over all judged responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerLabelSummary {
    pub layer: u32,
    pub total: usize,
    pub errors: usize,
}

/// Outcome of judging one text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub correct: bool,
    pub matched_answer: Option<String>,
}

fn is_punctuation(c: char) -> bool {
    c.general_category_group() == GeneralCategoryGroup::Punctuation
}

/// NFC + case-fold, punctuation to spaces, whitespace runs collapsed, trimmed.
pub fn normalize_text(s: &str) -> String {
    let folded: String = s
        .nfc()
        .flat_map(char::to_lowercase)
        .map(|c| if is_punctuation(c) { ' ' } else { c })
        .collect();
    let mut out = String::with_capacity(folded.len());
    for token in folded.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(token);
    }
    // lowercasing can produce decomposed sequences (e.g. 'İ'), so recompose
    out.nfc().collect()
}

/// Token-boundary containment of an already-normalized needle.
fn contains_tokens(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() || haystack.is_empty() {
        return false;
    }
    let padded = format!(" {haystack} ");
    padded.contains(&format!(" {needle} "))
}

/// Judges a response against the gold answers; the first matching gold answer
/// (in list order) is reported.
pub fn judge_response(response_text: &str, gold_answers: &[String]) -> Result<Verdict, JudgeError> {
    if gold_answers.is_empty() {
        return Err(JudgeError::NoGoldAnswers);
    }
    let response = normalize_text(response_text);
    let matched = gold_answers
        .iter()
        .find(|gold| contains_tokens(&response, &normalize_text(gold)))
        .cloned();
    Ok(Verdict {
        correct: matched.is_some(),
        matched_answer: matched,
    })
}

/// Counts errors among labels that all belong to `layer`.
pub fn summarize_labels(labels: &[CorrectnessLabel], layer: u32) -> Result<LayerLabelSummary, JudgeError> {
    if labels.is_empty() {
        return Err(JudgeError::NoLabels);
    }
    if let Some(bad) = labels.iter().find(|l| l.layer != layer) {
        return Err(JudgeError::MixedLayers {
            expected: layer,
            found: bad.layer,
        });
    }
    Ok(LayerLabelSummary {
        layer,
        total: labels.len(),
        errors: labels.iter().filter(|l| !l.correct).count(),
    })
}
