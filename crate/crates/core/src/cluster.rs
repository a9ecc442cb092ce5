//! Greedy semantic clustering of correct answers.
//!
//! Answers are visited in order. Each one joins the first existing
//! representative whose cosine similarity is at least `tau`; otherwise it
//! becomes a new representative. The number of representatives is the
//! creativity count for the cell. Visiting order matters near the threshold,
//! so callers pass texts in ascending sample index.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::fnv1a;

/// Smallest hashing dimension accepted by [`fallback_embed`].
pub const MIN_FALLBACK_DIM: usize = 64;
pub const DEFAULT_FALLBACK_DIM: usize = 256;
const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("nothing to embed")]
    EmptyInput,
    #[error("text {0:?} is empty after normalization")]
    EmptyText(String),
    #[error("fallback embedding dimension {0} is below {MIN_FALLBACK_DIM}")]
    DimensionTooSmall(usize),
    #[error("embedding backend returned {got} vectors for {expected} texts")]
    CountMismatch { expected: usize, got: usize },
    #[error("embedding backend returned a zero vector")]
    ZeroVector,
    #[error("embedding backend failed: {0}")]
    Backend(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimilarityError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero vector")]
    ZeroVector,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("tau must be in (0, 1], got {0}")]
    InvalidTau(f64),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

/// Unit-norm embedding of one text.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub source_text: String,
}

impl EmbeddingVector {
    /// L2-normalizes `values`; fails on an all-zero vector.
    pub fn normalized(mut values: Vec<f64>, source_text: impl Into<String>) -> Result<Self, EmbedError> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(EmbedError::ZeroVector);
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(Self {
            values,
            source_text: source_text.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= NORM_TOLERANCE
    }
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, SimilarityError> {
    if a.dim() != b.dim() {
        return Err(SimilarityError::DimensionMismatch(a.dim(), b.dim()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(SimilarityError::ZeroVector);
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Anything that turns texts into unit-norm vectors of one dimension.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError>;
}

/// Offline embedder: hashed character 3-gram counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FallbackEmbedder {
    pub dim: usize,
}

impl Default for FallbackEmbedder {
    fn default() -> Self {
        Self {
            dim: DEFAULT_FALLBACK_DIM,
        }
    }
}

impl Embedder for FallbackEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        texts.iter().map(|t| fallback_embed(t, self.dim)).collect()
    }
}

/// Lowercases `text`, counts its character 3-grams into `dim` FNV-1a buckets
/// and L2-normalizes. Texts shorter than three characters count as one gram.
pub fn fallback_embed(text: &str, dim: usize) -> Result<EmbeddingVector, EmbedError> {
    if dim < MIN_FALLBACK_DIM {
        return Err(EmbedError::DimensionTooSmall(dim));
    }
    let lowered = text.to_lowercase();
    if lowered.trim().is_empty() {
        return Err(EmbedError::EmptyText(text.to_string()));
    }
    let chars: Vec<char> = lowered.chars().collect();
    let mut counts = vec![0.0f64; dim];
    let mut bump = |gram: &[char]| {
        let s: String = gram.iter().collect();
        counts[(fnv1a(s.as_bytes()) % dim as u64) as usize] += 1.0;
    };
    if chars.len() < 3 {
        bump(&chars);
    } else {
        chars.windows(3).for_each(&mut bump);
    }
    EmbeddingVector::normalized(counts, text)
}

/// Lowercase and collapse whitespace before embedding.
pub fn prepare_text(text: &str) -> String {
    text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// One unique answer found by the clusterer.
#[derive(Debug, Clone, PartialEq)]
pub struct Representative {
    /// Position of the representative in the input list.
    pub input_index: usize,
    pub text: String,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClusterResult {
    pub representatives: Vec<Representative>,
    /// `assignment[i]` is the representative index of input `i`.
    pub assignment: Vec<usize>,
}

impl ClusterResult {
    pub fn representative_texts(&self) -> Vec<String> {
        self.representatives.iter().map(|r| r.text.clone()).collect()
    }
}

/// Absorbs rounding so that an exact tie with tau still joins.
const TIE_SLACK: f64 = 1e-12;

/// Greedy first-match clustering at threshold `tau`.
pub fn greedy_cluster(texts: &[String], embedder: &dyn Embedder, tau: f64) -> Result<ClusterResult, ClusterError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(ClusterError::InvalidTau(tau));
    }
    if texts.is_empty() {
        return Ok(ClusterResult::default());
    }
    let prepared: Vec<String> = texts.iter().map(|t| prepare_text(t)).collect();
    let vectors = embedder.embed(&prepared)?;
    if vectors.len() != texts.len() {
        return Err(EmbedError::CountMismatch {
            expected: texts.len(),
            got: vectors.len(),
        }
        .into());
    }

    let mut result = ClusterResult::default();
    for (idx, (text, vector)) in texts.iter().zip(vectors).enumerate() {
        let mut joined = None;
        for (rep_idx, rep) in result.representatives.iter().enumerate() {
            if cosine_similarity(&vector, &rep.vector)? >= tau - TIE_SLACK {
                joined = Some(rep_idx);
                break;
            }
        }
        let rep_idx = match joined {
            Some(r) => r,
            None => {
                result.representatives.push(Representative {
                    input_index: idx,
                    text: text.clone(),
                    vector,
                });
                result.representatives.len() - 1
            }
        };
        result.assignment.push(rep_idx);
    }
    Ok(result)
}

/// Number of unique semantic clusters.
pub fn creativity_count(result: &ClusterResult) -> usize {
    result.representatives.len()
}

/// Diagnostic record for one clustered cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDumpRecord {
    pub question_id: String,
    pub layer: u32,
    pub n_correct: usize,
    pub n_clusters: usize,
    pub representatives: Vec<String>,
}
