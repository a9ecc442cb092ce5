//! Score tables, plot series and the plain-text run summary.
//!
//! Emission is pure: everything is derived from a [`RunReport`] without
//! touching a provider.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confidence::LayerConfidence;
use crate::config::RunConfig;
use crate::provider::ModelInfo;
use crate::scoring::{select_early_exit_layer, select_optimal_layer, mean_hcb, RunScores, ScoreError, StabilityReport};
use crate::util::first_argmax;

pub const SCORE_TABLE_HEADER: &str = "layer,temperature,s_h,s_c_raw,s_c_norm,hcb,confidence";
pub const CONFIDENCE_TABLE_HEADER: &str = "layer,mean_p_true,n_queries";

/// Renders every `plot_*.jsonl` next to it with matplotlib, if available.
pub const PLOT_SCRIPT: &str = r#"import json, pathlib, sys
import matplotlib.pyplot as plt

here = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else ".")
for path in sorted(here.glob("plot_*.jsonl")):
    rows = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    fig, ax = plt.subplots()
    for t in sorted({r["temperature"] for r in rows}):
        series = sorted((r["layer"], r["value"], r["is_argmax"]) for r in rows if r["temperature"] == t)
        ax.plot([s[0] for s in series], [s[1] for s in series], marker="o", label=f"t={t}")
        for layer, value, best in series:
            if best:
                ax.annotate("max", (layer, value))
    ax.set_xlabel("layer")
    ax.set_ylabel(rows[0]["kind"] if rows else path.stem)
    ax.legend()
    fig.savefig(path.with_suffix(".png"))
"#;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("report has no scored layers")]
    EmptyRun,
    #[error("unknown plot kind {0:?} (expected creativity, hallucination, hcb or confidence)")]
    UnknownKind(String),
    #[error("report carries no {0} values")]
    KindMissing(PlotKind),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("malformed table line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Per-layer confidence for one temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSeries {
    pub temperature: f64,
    pub layers: Vec<LayerConfidence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: ModelInfo,
    pub dataset_tag: String,
    pub temperatures: Vec<f64>,
    /// One entry per temperature, in `temperatures` order.
    pub per_layer_scores: Vec<RunScores>,
    pub confidence: Vec<ConfidenceSeries>,
    pub optimal_layer: u32,
    pub early_exit_layer: u32,
    pub stability: StabilityReport,
    pub config_echo: RunConfig,
}

impl RunReport {
    /// Assembles a report and runs layer selection. Runs are reordered by temperature.
    pub fn build(
        mut runs: Vec<RunScores>,
        confidence: Vec<ConfidenceSeries>,
        dataset_tag: String,
        config: RunConfig,
    ) -> Result<Self, ReportError> {
        if runs.is_empty() || runs.iter().any(|r| r.per_layer.is_empty()) {
            return Err(ReportError::EmptyRun);
        }
        runs.sort_by(|a, b| a.temperature.total_cmp(&b.temperature));
        let (optimal_layer, stability) = select_optimal_layer(&runs)?;
        let early_exit_layer = select_early_exit_layer(&runs, config.epsilon)?;
        Ok(Self {
            model: runs[0].model.clone(),
            dataset_tag,
            temperatures: runs.iter().map(|r| r.temperature).collect(),
            per_layer_scores: runs,
            confidence,
            optimal_layer,
            early_exit_layer,
            stability,
            config_echo: config,
        })
    }

    pub fn has_confidence(&self) -> bool {
        self.per_layer_scores
            .iter()
            .any(|r| r.per_layer.iter().any(|l| l.confidence.is_some()))
    }

    /// Mean HCB of the early-exit layer over the best mean HCB.
    pub fn early_exit_ratio(&self) -> Result<f64, ReportError> {
        let (layers, means) = mean_hcb(&self.per_layer_scores)?;
        let best = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let idx = layers
            .iter()
            .position(|l| *l == self.early_exit_layer)
            .ok_or(ReportError::EmptyRun)?;
        Ok(if best > 0.0 { means[idx] / best } else { 1.0 })
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), ReportError> {
    fs::write(path, contents).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Score table text, sorted by (temperature, layer).
pub fn render_score_table(report: &RunReport) -> Result<String, ReportError> {
    let mut rows: Vec<(f64, &crate::scoring::LayerScore)> = report
        .per_layer_scores
        .iter()
        .flat_map(|r| r.per_layer.iter().map(move |l| (r.temperature, l)))
        .collect();
    if rows.is_empty() {
        return Err(ReportError::EmptyRun);
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.layer.cmp(&b.1.layer)));
    let mut out = String::from(SCORE_TABLE_HEADER);
    out.push('\n');
    for (t, l) in rows {
        let conf = l.confidence.map(|c| format!("{c:.6}")).unwrap_or_default();
        writeln!(
            out,
            "{},{t:.6},{:.6},{:.6},{:.6},{:.6},{conf}",
            l.layer, l.s_h, l.s_c_raw, l.s_c_norm, l.hcb
        )
        .expect("writing to a String");
    }
    Ok(out)
}

pub fn emit_score_table(report: &RunReport, path: &Path) -> Result<(), ReportError> {
    write_file(path, &render_score_table(report)?)
}

/// One parsed score table row.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub layer: u32,
    pub temperature: f64,
    pub s_h: f64,
    pub s_c_raw: f64,
    pub s_c_norm: f64,
    pub hcb: f64,
    pub confidence: Option<f64>,
}

pub fn parse_score_table(text: &str) -> Result<Vec<ScoreRow>, ReportError> {
    let mut lines = text.lines();
    if lines.next() != Some(SCORE_TABLE_HEADER) {
        return Err(ReportError::Parse {
            line: 1,
            reason: "unexpected header".into(),
        });
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = |reason: String| ReportError::Parse { line: i + 2, reason };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(format!("expected 7 fields, got {}", f.len())));
            }
            let num = |s: &str| f64::from_str(s).map_err(|e| bad(format!("{s:?}: {e}")));
            Ok(ScoreRow {
                layer: f[0].parse().map_err(|e| bad(format!("layer: {e}")))?,
                temperature: num(f[1])?,
                s_h: num(f[2])?,
                s_c_raw: num(f[3])?,
                s_c_norm: num(f[4])?,
                hcb: num(f[5])?,
                confidence: if f[6].is_empty() { None } else { Some(num(f[6])?) },
            })
        })
        .collect()
}

pub fn render_confidence_table(layers: &[LayerConfidence]) -> String {
    let mut sorted: Vec<&LayerConfidence> = layers.iter().collect();
    sorted.sort_by_key(|l| l.layer);
    let mut out = String::from(CONFIDENCE_TABLE_HEADER);
    out.push('\n');
    for l in sorted {
        writeln!(out, "{},{:.6},{}", l.layer, l.mean_p_true, l.n_queries).expect("writing to a String");
    }
    out
}

pub fn emit_confidence_table(layers: &[LayerConfidence], path: &Path) -> Result<(), ReportError> {
    write_file(path, &render_confidence_table(layers))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlotKind {
    Creativity,
    Hallucination,
    Hcb,
    Confidence,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] = [PlotKind::Creativity, PlotKind::Hallucination, PlotKind::Hcb, PlotKind::Confidence];

    pub fn as_str(self) -> &'static str {
        match self {
            PlotKind::Creativity => "creativity",
            PlotKind::Hallucination => "hallucination",
            PlotKind::Hcb => "hcb",
            PlotKind::Confidence => "confidence",
        }
    }
}

impl std::fmt::Display for PlotKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlotKind {
    type Err = ReportError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ReportError::UnknownKind(s.to_string()))
    }
}

/// One point of a plotted series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRecord {
    pub temperature: f64,
    pub layer: u32,
    pub value: f64,
    pub kind: PlotKind,
    /// Set on the series maximum (earliest layer on ties).
    pub is_argmax: bool,
}

/// Per-temperature series for `kind`. Creativity is the normalized score.
pub fn plot_series(report: &RunReport, kind: PlotKind) -> Result<Vec<PlotRecord>, ReportError> {
    if kind == PlotKind::Confidence && !report.has_confidence() {
        return Err(ReportError::KindMissing(kind));
    }
    let mut out = Vec::new();
    for run in &report.per_layer_scores {
        let points: Vec<(u32, f64)> = run
            .per_layer
            .iter()
            .filter_map(|l| {
                let v = match kind {
                    PlotKind::Creativity => Some(l.s_c_norm),
                    PlotKind::Hallucination => Some(l.s_h),
                    PlotKind::Hcb => Some(l.hcb),
                    PlotKind::Confidence => l.confidence,
                };
                v.map(|v| (l.layer, v))
            })
            .collect();
        let values: Vec<f64> = points.iter().map(|p| p.1).collect();
        let best = first_argmax(&values);
        out.extend(points.into_iter().enumerate().map(|(i, (layer, value))| PlotRecord {
            temperature: run.temperature,
            layer,
            value,
            kind,
            is_argmax: Some(i) == best,
        }));
    }
    if out.is_empty() {
        return Err(ReportError::EmptyRun);
    }
    Ok(out)
}

pub fn render_plot_data(report: &RunReport, kind: PlotKind) -> Result<String, ReportError> {
    let mut out = String::new();
    for rec in plot_series(report, kind)? {
        out.push_str(&serde_json::to_string(&rec).expect("plot record serializes"));
        out.push('\n');
    }
    Ok(out)
}

pub fn emit_plot_data(report: &RunReport, kind: PlotKind, path: &Path) -> Result<(), ReportError> {
    write_file(path, &render_plot_data(report, kind)?)
}

/// Human-readable block describing model, argmax layers and the early-exit choice.
pub fn summarize_run(report: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "model: {} ({} layers)", report.model.name, report.model.layer_count);
    let _ = writeln!(s, "dataset: {}", report.dataset_tag);
    let temps: Vec<String> = report.temperatures.iter().map(|t| t.to_string()).collect();
    let _ = writeln!(s, "temperatures: {}", temps.join(", "));
    for run in &report.per_layer_scores {
        if let Some(layer) = run.argmax_layer() {
            let hcb = run.per_layer.iter().find(|l| l.layer == layer).map(|l| l.hcb).unwrap_or(f64::NAN);
            let _ = writeln!(s, "argmax layer at t={}: {layer} (hcb {hcb:.6})", run.temperature);
        }
    }
    let _ = writeln!(s, "optimal layer (mean hcb across temperatures): {}", report.optimal_layer);
    let verdict = if report.per_layer_scores.len() < 2 {
        "n/a (single run)"
    } else if report.stability.agree {
        "yes"
    } else {
        "no"
    };
    let _ = writeln!(s, "argmax agrees across temperatures: {verdict}");
    let eps = report.config_echo.epsilon;
    let _ = writeln!(s, "early-exit layer (epsilon {eps}): {}", report.early_exit_layer);
    match report.early_exit_ratio() {
        Ok(ratio) => {
            let _ = writeln!(s, "early-exit HCB / max HCB ≥ {:.2} (actual {ratio:.6})", 1.0 - eps);
        }
        Err(e) => {
            let _ = writeln!(s, "early-exit HCB ratio unavailable: {e}");
        }
    }
    s
}

/// Spearman rank correlation with average ranks for ties. `None` when
/// either side is constant or shorter than two.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in &idx[i..=j] {
            out[*k] = avg;
        }
        i = j + 1;
    }
    out
}
