//! Per-layer scores and layer selection.
//!
//! - hallucination `s_h = errors / total`
//! - creativity `s_c_raw` = mean cluster count over questions, min-max
//!   normalized across the layers of one run
//! - balanced score `hcb = w_c * s_c_norm + w_h * (1 - s_h)`

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::judge::LayerLabelSummary;
use crate::provider::ModelInfo;
use crate::util::first_argmax;

const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("layer {0} has no judged responses")]
    EmptyLayer(u32),
    #[error("no per-question cluster counts")]
    NoCells,
    #[error("weights must lie in [0, 1] and sum to 1 (got w_c={w_c}, w_h={w_h})")]
    InvalidWeights { w_c: f64, w_h: f64 },
    #[error("{name} = {value} is outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("no runs to select from")]
    NoRuns,
    #[error("run has no layers")]
    EmptyRun,
    #[error("runs cover different layer sets")]
    MismatchedLayers,
    #[error("epsilon must be in [0, 1), got {0}")]
    InvalidEpsilon(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWeights")]
pub struct ScoreWeights {
    pub w_c: f64,
    pub w_h: f64,
}

#[derive(Deserialize)]
struct RawWeights {
    w_c: f64,
    w_h: f64,
}

impl TryFrom<RawWeights> for ScoreWeights {
    type Error = ScoreError;
    fn try_from(r: RawWeights) -> Result<Self, Self::Error> {
        ScoreWeights::new(r.w_c, r.w_h)
    }
}

impl ScoreWeights {
    pub fn new(w_c: f64, w_h: f64) -> Result<Self, ScoreError> {
        let in_unit = |w: f64| (0.0..=1.0).contains(&w);
        if !in_unit(w_c) || !in_unit(w_h) || (w_c + w_h - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(ScoreError::InvalidWeights { w_c, w_h });
        }
        Ok(Self { w_c, w_h })
    }
}

impl Default for ScoreWeights {
    /// Equal weighting of creativity and factuality.
    fn default() -> Self {
        Self { w_c: 0.5, w_h: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerScore {
    pub layer: u32,
    pub s_h: f64,
    pub s_c_raw: f64,
    pub s_c_norm: f64,
    pub hcb: f64,
    pub confidence: Option<f64>,
}

/// Scores of every evaluated layer at one temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScores {
    pub per_layer: Vec<LayerScore>,
    pub temperature: f64,
    pub weights: ScoreWeights,
    pub model: ModelInfo,
}

impl RunScores {
    pub fn layers(&self) -> Vec<u32> {
        self.per_layer.iter().map(|s| s.layer).collect()
    }

    /// Layer with the highest HCB in this run, ties toward the earliest layer.
    pub fn argmax_layer(&self) -> Option<u32> {
        let hcb: Vec<f64> = self.per_layer.iter().map(|s| s.hcb).collect();
        first_argmax(&hcb).map(|i| self.per_layer[i].layer)
    }
}

pub fn hallucination_score(summary: &LayerLabelSummary) -> Result<f64, ScoreError> {
    if summary.total == 0 {
        return Err(ScoreError::EmptyLayer(summary.layer));
    }
    Ok(summary.errors as f64 / summary.total as f64)
}

/// Mean of the per-question cluster counts at one layer.
pub fn layer_creativity(cells: &[usize]) -> Result<f64, ScoreError> {
    if cells.is_empty() {
        return Err(ScoreError::NoCells);
    }
    Ok(cells.iter().sum::<usize>() as f64 / cells.len() as f64)
}

/// Maps values onto [0, 1]; a constant vector maps to 0.5 everywhere.
pub fn minmax_normalize(values: &[f64]) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || max == min {
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - min) / (max - min)).collect()
}

pub fn hcb_score(s_c_norm: f64, s_h: f64, weights: ScoreWeights) -> Result<f64, ScoreError> {
    for (name, value) in [("s_c_norm", s_c_norm), ("s_h", s_h)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(ScoreError::OutOfRange { name, value });
        }
    }
    Ok(weights.w_c * s_c_norm + weights.w_h * (1.0 - s_h))
}

/// Per-layer inputs gathered by the pipeline before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerInputs {
    pub summary: LayerLabelSummary,
    pub cluster_counts: Vec<usize>,
    pub confidence: Option<f64>,
}

/// Scores all layers of one run. `layers` must be sorted by layer and unique.
pub fn score_run(
    layers: &[LayerInputs],
    temperature: f64,
    weights: ScoreWeights,
    model: ModelInfo,
) -> Result<RunScores, ScoreError> {
    if layers.is_empty() {
        return Err(ScoreError::EmptyRun);
    }
    let s_h: Vec<f64> = layers
        .iter()
        .map(|l| hallucination_score(&l.summary))
        .collect::<Result<_, _>>()?;
    let s_c_raw: Vec<f64> = layers
        .iter()
        .map(|l| layer_creativity(&l.cluster_counts))
        .collect::<Result<_, _>>()?;
    let s_c_norm = minmax_normalize(&s_c_raw);
    let per_layer = layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            Ok(LayerScore {
                layer: l.summary.layer,
                s_h: s_h[i],
                s_c_raw: s_c_raw[i],
                s_c_norm: s_c_norm[i],
                hcb: hcb_score(s_c_norm[i], s_h[i], weights)?,
                confidence: l.confidence,
            })
        })
        .collect::<Result<_, ScoreError>>()?;
    Ok(RunScores {
        per_layer,
        temperature,
        weights,
        model,
    })
}

/// Per-run argmax layers and whether they coincide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// `(temperature, argmax layer)` for each run, in input order.
    pub per_run: Vec<(f64, u32)>,
    pub agree: bool,
}

/// Mean HCB per layer across runs, with the shared layer list.
pub fn mean_hcb(runs: &[RunScores]) -> Result<(Vec<u32>, Vec<f64>), ScoreError> {
    let first = runs.first().ok_or(ScoreError::NoRuns)?;
    let layers = first.layers();
    if layers.is_empty() {
        return Err(ScoreError::EmptyRun);
    }
    if runs.iter().any(|r| r.layers() != layers) {
        return Err(ScoreError::MismatchedLayers);
    }
    let means = (0..layers.len())
        .map(|i| {
            // sorted summation keeps the mean independent of run order
            let mut vals: Vec<f64> = runs.iter().map(|r| r.per_layer[i].hcb).collect();
            vals.sort_by(f64::total_cmp);
            vals.iter().sum::<f64>() / vals.len() as f64
        })
        .collect();
    Ok((layers, means))
}

/// Layer maximizing the mean HCB across runs; ties go to the smallest layer.
pub fn select_optimal_layer(runs: &[RunScores]) -> Result<(u32, StabilityReport), ScoreError> {
    let (layers, means) = mean_hcb(runs)?;
    let best = first_argmax(&means).ok_or(ScoreError::EmptyRun)?;
    let per_run: Vec<(f64, u32)> = runs
        .iter()
        .map(|r| (r.temperature, r.argmax_layer().expect("layers checked non-empty")))
        .collect();
    let agree = per_run.windows(2).all(|w| w[0].1 == w[1].1);
    Ok((layers[best], StabilityReport { per_run, agree }))
}

/// Smallest layer whose mean HCB is within a factor `1 - epsilon` of the best.
pub fn select_early_exit_layer(runs: &[RunScores], epsilon: f64) -> Result<u32, ScoreError> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(ScoreError::InvalidEpsilon(epsilon));
    }
    let (layers, means) = mean_hcb(runs)?;
    let best = first_argmax(&means).ok_or(ScoreError::EmptyRun)?;
    if epsilon == 0.0 {
        return Ok(layers[best]);
    }
    let threshold = (1.0 - epsilon) * means[best];
    let idx = means.iter().position(|m| *m >= threshold).unwrap_or(best);
    Ok(layers[idx])
}

/// Distinct layers across runs, ascending.
pub fn layer_union(runs: &[RunScores]) -> Vec<u32> {
    runs.iter()
        .flat_map(|r| r.layers())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}
