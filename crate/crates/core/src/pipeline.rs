//! End-to-end driver: ingest, generate, judge, cluster, score, confidence, report.
//!
//! Generation fans out over (question, layer, temperature) units. Every
//! finished unit is appended to `checkpoint/responses.partial.jsonl` and then
//! recorded in `checkpoint/manifest.jsonl`; a rerun of the same config skips
//! recorded units. Later stages run after generation completes and write
//! their files sorted, so a resumed run produces the same bytes as an
//! uninterrupted one.
//!
//! ```text
//! <output_dir>/<run-id>/
//!   config.toml
//!   checkpoint/{manifest.jsonl, responses.partial.jsonl}
//!   responses/responses.jsonl
//!   labels/t<temp>.jsonl
//!   clusters/t<temp>.jsonl
//!   scores/scores.csv
//!   confidence/t<temp>.csv
//!   report/{summary.txt, report.json, plot_<kind>.jsonl, plot.py}
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::cluster::{creativity_count, greedy_cluster, ClusterDumpRecord, ClusterError, Embedder, FallbackEmbedder};
use crate::confidence::{layer_confidence, ConfidenceError, LayerConfidence};
use crate::config::{ConfigError, EmbedderConfig, ProviderConfig, RunConfig, DEFAULT_SIM_LAYERS};
use crate::dataset::{ingest_dataset, sample_corpus, Corpus, DatasetError};
use crate::judge::{judge_response, summarize_labels, CorrectnessLabel, JudgeError};
use crate::provider::{
    generate_checked, read_responses, render_prompt, write_responses, GenerationRequest, LayerResponse, ModelInfo,
    Provider, ProviderEmbedder, ProviderError, ReplayProvider, RetryPolicy, Retrying, SidecarProvider, SimProvider,
};
use crate::report::{
    emit_confidence_table, emit_plot_data, emit_score_table, summarize_run, ConfidenceSeries, PlotKind, ReportError,
    RunReport, PLOT_SCRIPT,
};
use crate::scoring::{score_run, LayerInputs, RunScores, ScoreError};
use crate::simgen::{make_tradeoff_fixture, SimError};
use crate::util::{sha256_hex, temp_key};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Confidence(#[from] ConfidenceError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("responses refer to unknown question {0:?}")]
    UnknownQuestion(String),
    #[error("layer {layer} requested but the model has {layer_count} layers")]
    LayerOutOfRange { layer: u32, layer_count: u32 },
    #[error("no responses to score")]
    NoResponses,
    #[error("stopped after {completed} of {total} units; rerun to resume from {}", .run_dir.display())]
    Interrupted {
        completed: usize,
        total: usize,
        run_dir: PathBuf,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Knobs that do not affect results.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Abort with [`PipelineError::Interrupted`] after this many newly generated units.
    pub stop_after_units: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub run_dir: PathBuf,
}

pub fn build_provider(config: &RunConfig) -> Result<Arc<dyn Provider>, PipelineError> {
    Ok(match &config.provider {
        ProviderConfig::Sidecar { url, timeout_secs } => Arc::new(Retrying::new(
            SidecarProvider::new(url.clone(), Duration::from_secs(*timeout_secs), config.workers),
            RetryPolicy::default(),
        )),
        ProviderConfig::Replay { path } => Arc::new(ReplayProvider::from_file(path)?),
        ProviderConfig::Sim { num_layers, config: sim } => {
            let sim = match sim {
                Some(c) => c.clone(),
                None => make_tradeoff_fixture(num_layers.unwrap_or(DEFAULT_SIM_LAYERS), config.seed)?,
            };
            Arc::new(SimProvider::new(sim)?)
        }
    })
}

pub fn build_embedder(config: &RunConfig, provider: &Arc<dyn Provider>) -> Box<dyn Embedder> {
    match config.embedder {
        EmbedderConfig::Fallback { dim } => Box::new(FallbackEmbedder { dim }),
        EmbedderConfig::Provider => Box::new(ProviderEmbedder(provider.clone())),
    }
}

/// Ingests the dataset and applies the optional seeded subsample.
pub fn load_corpus(config: &RunConfig) -> Result<Corpus, PipelineError> {
    let corpus = ingest_dataset(&config.dataset_path, config.min_answers)?;
    Ok(match config.sample_n {
        Some(n) if n < corpus.len() => sample_corpus(&corpus, n, config.seed)?,
        _ => corpus,
    })
}

type UnitTuple = (String, u32, u64);

fn tuple_of(r: &LayerResponse) -> UnitTuple {
    (r.question_id.clone(), r.layer, temp_key(r.temperature))
}

/// One pending (question, layer, temperature) generation job.
struct Unit {
    question: usize,
    layer: u32,
    temperature: f64,
}

struct Checkpoint {
    manifest: File,
    partial: File,
    dir: PathBuf,
}

const MANIFEST: &str = "manifest.jsonl";
const PARTIAL: &str = "responses.partial.jsonl";

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    question_id: String,
    layer: u32,
    temperature: f64,
}

/// Reads a JSONL file, tolerating a torn final line.
fn read_jsonl_lenient<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, PipelineError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = File::open(path).map_err(io_err(path))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(io_err(path))?;
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(_) if i + 1 == lines.len() => warn!(path = %path.display(), "dropping torn final line"),
            Err(e) => {
                return Err(PipelineError::Io {
                    path: path.to_path_buf(),
                    source: std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)),
                })
            }
        }
    }
    Ok(out)
}

impl Checkpoint {
    /// Loads completed units and rewrites both files to exactly that state.
    fn open(dir: &Path, samples_per_unit: u32) -> Result<(Self, Vec<LayerResponse>), PipelineError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let manifest_path = dir.join(MANIFEST);
        let partial_path = dir.join(PARTIAL);
        let done: HashSet<UnitTuple> = read_jsonl_lenient::<ManifestLine>(&manifest_path)?
            .into_iter()
            .map(|m| (m.question_id, m.layer, temp_key(m.temperature)))
            .collect();
        let mut by_unit: HashMap<UnitTuple, BTreeMap<u32, LayerResponse>> = HashMap::new();
        for r in read_jsonl_lenient::<LayerResponse>(&partial_path)? {
            let key = tuple_of(&r);
            if done.contains(&key) {
                by_unit.entry(key).or_default().insert(r.sample_idx, r);
            }
        }
        let mut kept: Vec<Vec<LayerResponse>> = by_unit
            .into_values()
            .filter(|cell| cell.len() == samples_per_unit as usize && cell.keys().copied().eq(1..=samples_per_unit))
            .map(|cell| cell.into_values().collect())
            .collect();
        kept.sort_by(|a, b| cmp_cells(&a[0], &b[0]));

        let mut cp = Self {
            manifest: File::create(&manifest_path).map_err(io_err(&manifest_path))?,
            partial: File::create(&partial_path).map_err(io_err(&partial_path))?,
            dir: dir.to_path_buf(),
        };
        for cell in &kept {
            cp.append(cell)?;
        }
        cp.manifest = OpenOptions::new()
            .append(true)
            .open(&manifest_path)
            .map_err(io_err(&manifest_path))?;
        cp.partial = OpenOptions::new()
            .append(true)
            .open(&partial_path)
            .map_err(io_err(&partial_path))?;
        Ok((cp, kept.into_iter().flatten().collect()))
    }

    fn append(&mut self, cell: &[LayerResponse]) -> Result<(), PipelineError> {
        let partial_path = self.dir.join(PARTIAL);
        let manifest_path = self.dir.join(MANIFEST);
        let mut buf = Vec::new();
        for r in cell {
            serde_json::to_writer(&mut buf, r).expect("response serializes");
            buf.push(b'\n');
        }
        self.partial.write_all(&buf).map_err(io_err(&partial_path))?;
        self.partial.flush().map_err(io_err(&partial_path))?;
        let first = &cell[0];
        let mut line = serde_json::to_vec(&ManifestLine {
            question_id: first.question_id.clone(),
            layer: first.layer,
            temperature: first.temperature,
        })
        .expect("manifest line serializes");
        line.push(b'\n');
        self.manifest.write_all(&line).map_err(io_err(&manifest_path))?;
        self.manifest.flush().map_err(io_err(&manifest_path))
    }
}

/// Canonical cell order: temperature, question id, layer.
fn cmp_cells(a: &LayerResponse, b: &LayerResponse) -> std::cmp::Ordering {
    a.temperature
        .total_cmp(&b.temperature)
        .then_with(|| a.question_id.cmp(&b.question_id))
        .then(a.layer.cmp(&b.layer))
}

fn cmp_responses(a: &LayerResponse, b: &LayerResponse) -> std::cmp::Ordering {
    cmp_cells(a, b).then(a.sample_idx.cmp(&b.sample_idx))
}

fn run_unit(
    provider: &dyn Provider,
    model: &ModelInfo,
    corpus: &Corpus,
    config: &RunConfig,
    unit: &Unit,
) -> Result<Vec<LayerResponse>, ProviderError> {
    let question = &corpus.questions[unit.question];
    let request = GenerationRequest {
        prompt: render_prompt(&config.prompt_template, &question.text),
        layer: unit.layer,
        n: config.samples_per_layer,
        temperature: unit.temperature,
        max_tokens: config.max_tokens,
        seed: Some(config.seed),
    };
    let texts = generate_checked(provider, model, question, &request)?;
    Ok(texts
        .into_iter()
        .zip(1..)
        .map(|(text, sample_idx)| LayerResponse {
            question_id: question.id.clone(),
            layer: unit.layer,
            sample_idx,
            temperature: unit.temperature,
            text,
            provider_name: provider.name().to_string(),
        })
        .collect())
}

struct GenerationOutcome {
    responses: Vec<LayerResponse>,
    stopped_at: Option<usize>,
}

/// Runs pending units on a bounded pool; this thread is the only writer.
fn generate_units(
    provider: &dyn Provider,
    model: &ModelInfo,
    corpus: &Corpus,
    config: &RunConfig,
    units: &[Unit],
    checkpoint: &mut Checkpoint,
    stop_after: Option<usize>,
) -> Result<GenerationOutcome, PipelineError> {
    let workers = provider
        .max_concurrency()
        .map_or(config.workers, |c| c.min(config.workers))
        .clamp(1, units.len().max(1));
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<Result<Vec<LayerResponse>, ProviderError>>();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, abort) = (&next, &abort);
            scope.spawn(move || loop {
                if abort.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(unit) = units.get(i) else { break };
                if tx.send(run_unit(provider, model, corpus, config, unit)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut responses = Vec::new();
        let mut completed = 0;
        let mut failure = None;
        let mut stopped_at = None;
        for result in rx {
            if failure.is_some() || stopped_at.is_some() {
                continue;
            }
            match result.map_err(PipelineError::from).and_then(|cell| {
                checkpoint.append(&cell)?;
                Ok(cell)
            }) {
                Ok(cell) => {
                    responses.extend(cell);
                    completed += 1;
                    if stop_after == Some(completed) && completed < units.len() {
                        stopped_at = Some(completed);
                        abort.store(true, Ordering::Relaxed);
                    }
                }
                Err(e) => {
                    failure = Some(e);
                    abort.store(true, Ordering::Relaxed);
                }
            }
        }
        match failure {
            Some(e) => Err(e),
            None => Ok(GenerationOutcome { responses, stopped_at }),
        }
    })
}

fn ensure_dir(path: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

/// File-name tag for a temperature, e.g. `t0.6`.
pub fn temp_tag(t: f64) -> String {
    format!("t{t}")
}

/// Runs every stage for `config`, resuming from a checkpoint if one exists.
pub fn cmd_run(config: &RunConfig, opts: &RunOptions) -> Result<RunOutcome, PipelineError> {
    config.validate()?;
    let run_dir = config.run_dir();
    ensure_dir(&run_dir)?;
    let config_path = run_dir.join("config.toml");
    fs::write(&config_path, config.to_toml()).map_err(io_err(&config_path))?;

    let corpus = load_corpus(config)?;
    let provider = build_provider(config)?;
    let model = provider.model_info()?;
    let layers = config.layers.resolve(model.layer_count);
    if let Some(&bad) = layers.iter().find(|l| **l > model.layer_count) {
        return Err(PipelineError::LayerOutOfRange {
            layer: bad,
            layer_count: model.layer_count,
        });
    }
    info!(run_dir = %run_dir.display(), questions = corpus.len(), layers = layers.len(), "starting run");

    let checkpoint_dir = run_dir.join("checkpoint");
    let (mut checkpoint, mut responses) = Checkpoint::open(&checkpoint_dir, config.samples_per_layer)?;
    let done: HashSet<UnitTuple> = responses.iter().map(tuple_of).collect();
    let mut units = Vec::new();
    for &temperature in &config.temperatures {
        for (question, q) in corpus.questions.iter().enumerate() {
            for &layer in &layers {
                if !done.contains(&(q.id.clone(), layer, temp_key(temperature))) {
                    units.push(Unit {
                        question,
                        layer,
                        temperature,
                    });
                }
            }
        }
    }
    let total = units.len() + done.len();
    if !done.is_empty() {
        info!(skipped = done.len(), remaining = units.len(), "resuming from checkpoint");
    }
    let generated = generate_units(
        provider.as_ref(),
        &model,
        &corpus,
        config,
        &units,
        &mut checkpoint,
        opts.stop_after_units,
    )?;
    responses.extend(generated.responses);
    if let Some(n) = generated.stopped_at {
        return Err(PipelineError::Interrupted {
            completed: done.len() + n,
            total,
            run_dir,
        });
    }
    drop(checkpoint);
    responses.sort_by(cmp_responses);

    // canonical checkpoint so completed runs are byte-identical however they got here
    write_responses(&checkpoint_dir.join(PARTIAL), &responses).map_err(io_err(&checkpoint_dir))?;
    let mut manifest = String::new();
    for r in responses.iter().filter(|r| r.sample_idx == 1) {
        let line = ManifestLine {
            question_id: r.question_id.clone(),
            layer: r.layer,
            temperature: r.temperature,
        };
        manifest.push_str(&serde_json::to_string(&line).expect("manifest line serializes"));
        manifest.push('\n');
    }
    fs::write(checkpoint_dir.join(MANIFEST), manifest).map_err(io_err(&checkpoint_dir))?;

    let responses_dir = run_dir.join("responses");
    ensure_dir(&responses_dir)?;
    let responses_path = responses_dir.join("responses.jsonl");
    write_responses(&responses_path, &responses).map_err(io_err(&responses_path))?;

    let confidence_provider = confidence_provider(config, &provider);
    let embedder = build_embedder(config, &provider);
    let scored = score_responses(config, &corpus, &responses, &model, confidence_provider, embedder.as_ref())?;
    let report = write_outputs(config, &corpus, scored, &run_dir)?;
    Ok(RunOutcome { report, run_dir })
}

fn confidence_provider<'a>(config: &RunConfig, provider: &'a Arc<dyn Provider>) -> Option<&'a dyn Provider> {
    if !config.confidence.enabled {
        return None;
    }
    if matches!(config.provider, ProviderConfig::Replay { .. }) {
        warn!("replay provider cannot answer P(True) queries; skipping confidence");
        return None;
    }
    Some(provider.as_ref())
}

/// Re-scores recorded responses without generating. Outputs land in
/// `<output_dir>/<score-id>/`, where the id also covers the response file.
pub fn cmd_score(config: &RunConfig, responses_path: &Path) -> Result<RunOutcome, PipelineError> {
    config.validate()?;
    let bytes = fs::read(responses_path).map_err(io_err(responses_path))?;
    let mut responses = read_responses(responses_path)?;
    if responses.is_empty() {
        return Err(PipelineError::NoResponses);
    }
    responses.sort_by(cmp_responses);
    let corpus = load_corpus(config)?;
    let model = ModelInfo {
        name: responses[0].provider_name.clone(),
        layer_count: responses.iter().map(|r| r.layer).max().unwrap_or(0),
    };
    let id = sha256_hex(format!("{}:{}", config.run_id(), sha256_hex(&bytes)).as_bytes())[..16].to_string();
    let run_dir = config.output_dir.join(format!("score-{id}"));
    ensure_dir(&run_dir)?;
    let config_path = run_dir.join("config.toml");
    fs::write(&config_path, config.to_toml()).map_err(io_err(&config_path))?;

    let needs_provider = config.confidence.enabled || config.embedder == EmbedderConfig::Provider;
    let provider = if needs_provider { Some(build_provider(config)?) } else { None };
    let fallback: Box<dyn Embedder> = Box::new(FallbackEmbedder::default());
    let embedder = match &provider {
        Some(p) => build_embedder(config, p),
        None => fallback,
    };
    let conf = provider.as_ref().and_then(|p| confidence_provider(config, p));
    let scored = score_responses(config, &corpus, &responses, &model, conf, embedder.as_ref())?;
    let report = write_outputs(config, &corpus, scored, &run_dir)?;
    Ok(RunOutcome { report, run_dir })
}

/// Intermediate products of the scoring stages, per temperature (ascending).
#[derive(Debug, Clone)]
pub struct Scored {
    pub labels: Vec<(f64, Vec<CorrectnessLabel>)>,
    pub clusters: Vec<(f64, Vec<ClusterDumpRecord>)>,
    pub runs: Vec<RunScores>,
    pub confidence: Vec<ConfidenceSeries>,
}

/// Judging, clustering, scoring and confidence over a full response set.
pub fn score_responses(
    config: &RunConfig,
    corpus: &Corpus,
    responses: &[LayerResponse],
    model: &ModelInfo,
    confidence_provider: Option<&dyn Provider>,
    embedder: &dyn Embedder,
) -> Result<Scored, PipelineError> {
    let weights = config.weights()?;
    let q_index: HashMap<&str, usize> = corpus.iter().enumerate().map(|(i, q)| (q.id.as_str(), i)).collect();
    if let Some(r) = responses.iter().find(|r| !q_index.contains_key(r.question_id.as_str())) {
        return Err(PipelineError::UnknownQuestion(r.question_id.clone()));
    }
    let wanted: Option<HashSet<u32>> = match &config.layers {
        crate::config::LayerSelection::All => None,
        crate::config::LayerSelection::Explicit(v) => Some(v.iter().copied().collect()),
    };

    // temperature -> (layer, question index) -> responses in sample order
    type Cells<'a> = BTreeMap<(u32, usize), Vec<&'a LayerResponse>>;
    let mut by_temp: BTreeMap<u64, (f64, Cells)> = BTreeMap::new();
    for r in responses {
        if wanted.as_ref().is_some_and(|w| !w.contains(&r.layer)) {
            continue;
        }
        // positive floats order like their bit patterns
        let entry = by_temp.entry(temp_key(r.temperature)).or_insert((r.temperature, Cells::new()));
        entry.1.entry((r.layer, q_index[r.question_id.as_str()])).or_default().push(r);
    }
    if by_temp.is_empty() {
        return Err(PipelineError::NoResponses);
    }

    let mut scored = Scored {
        labels: Vec::new(),
        clusters: Vec::new(),
        runs: Vec::new(),
        confidence: Vec::new(),
    };
    for (_, (temperature, mut cells)) in by_temp {
        for cell in cells.values_mut() {
            cell.sort_by_key(|r| r.sample_idx);
        }
        let cell_list: Vec<(&(u32, usize), &Vec<&LayerResponse>)> = cells.iter().collect();

        let judged: Vec<(Vec<CorrectnessLabel>, ClusterDumpRecord)> = cell_list
            .par_iter()
            .map(|((layer, qi), cell)| {
                let question = &corpus.questions[*qi];
                let labels: Vec<CorrectnessLabel> = cell
                    .iter()
                    .map(|r| {
                        let v = judge_response(&r.text, &question.gold_answers)?;
                        Ok(CorrectnessLabel {
                            question_id: r.question_id.clone(),
                            layer: *layer,
                            sample_idx: r.sample_idx,
                            correct: v.correct,
                            matched_answer: v.matched_answer,
                        })
                    })
                    .collect::<Result<_, JudgeError>>()?;
                let correct: Vec<String> = cell
                    .iter()
                    .zip(&labels)
                    .filter(|(_, l)| l.correct)
                    .map(|(r, _)| r.text.clone())
                    .collect();
                let clusters = greedy_cluster(&correct, embedder, config.tau)?;
                let dump = ClusterDumpRecord {
                    question_id: question.id.clone(),
                    layer: *layer,
                    n_correct: correct.len(),
                    n_clusters: creativity_count(&clusters),
                    representatives: clusters.representative_texts(),
                };
                Ok((labels, dump))
            })
            .collect::<Result<_, PipelineError>>()?;

        let layers: Vec<u32> = {
            let mut l: Vec<u32> = cells.keys().map(|(layer, _)| *layer).collect();
            l.dedup();
            l
        };
        let layer_responses: Vec<LayerResponse> = cells.values().flatten().map(|r| (*r).clone()).collect();
        let confidences: Vec<LayerConfidence> = match confidence_provider {
            Some(p) => layers
                .iter()
                .map(|l| layer_confidence(*l, &layer_responses, corpus, p, config.confidence.k))
                .collect::<Result<_, _>>()?,
            None => Vec::new(),
        };

        let mut inputs = Vec::with_capacity(layers.len());
        for (i, &layer) in layers.iter().enumerate() {
            let at_layer: Vec<&(Vec<CorrectnessLabel>, ClusterDumpRecord)> =
                judged.iter().filter(|(_, d)| d.layer == layer).collect();
            let labels: Vec<CorrectnessLabel> = at_layer.iter().flat_map(|(l, _)| l.iter().cloned()).collect();
            inputs.push(LayerInputs {
                summary: summarize_labels(&labels, layer)?,
                cluster_counts: at_layer.iter().map(|(_, d)| d.n_clusters).collect(),
                confidence: confidences.get(i).map(|c| c.mean_p_true),
            });
        }
        scored
            .runs
            .push(score_run(&inputs, temperature, weights, model.clone())?);
        let (labels, dumps): (Vec<_>, Vec<_>) = judged.into_iter().unzip();
        scored.labels.push((temperature, labels.into_iter().flatten().collect()));
        scored.clusters.push((temperature, dumps));
        if !confidences.is_empty() {
            scored.confidence.push(ConfidenceSeries {
                temperature,
                layers: confidences,
            });
        }
    }
    Ok(scored)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).expect("record serializes");
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(io_err(path))
}

/// Writes labels, clusters, scores, confidence and report files; returns the report.
pub fn write_outputs(
    config: &RunConfig,
    corpus: &Corpus,
    scored: Scored,
    run_dir: &Path,
) -> Result<RunReport, PipelineError> {
    let dirs = ["labels", "clusters", "scores", "confidence", "report"].map(|d| run_dir.join(d));
    for d in &dirs {
        ensure_dir(d)?;
    }
    let [labels_dir, clusters_dir, scores_dir, confidence_dir, report_dir] = dirs;
    for (t, labels) in &scored.labels {
        write_jsonl(&labels_dir.join(format!("{}.jsonl", temp_tag(*t))), labels)?;
    }
    for (t, dumps) in &scored.clusters {
        write_jsonl(&clusters_dir.join(format!("{}.jsonl", temp_tag(*t))), dumps)?;
    }
    for series in &scored.confidence {
        emit_confidence_table(
            &series.layers,
            &confidence_dir.join(format!("{}.csv", temp_tag(series.temperature))),
        )?;
    }

    let report = RunReport::build(scored.runs, scored.confidence, corpus.dataset_tag(), config.clone())?;
    emit_score_table(&report, &scores_dir.join("scores.csv"))?;
    for kind in PlotKind::ALL {
        if kind == PlotKind::Confidence && !report.has_confidence() {
            continue;
        }
        emit_plot_data(&report, kind, &report_dir.join(format!("plot_{kind}.jsonl")))?;
    }
    let summary_path = report_dir.join("summary.txt");
    fs::write(&summary_path, summarize_run(&report)).map_err(io_err(&summary_path))?;
    let json_path = report_dir.join("report.json");
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(&json_path, json + "\n").map_err(io_err(&json_path))?;
    let script_path = report_dir.join("plot.py");
    fs::write(&script_path, PLOT_SCRIPT).map_err(io_err(&script_path))?;
    Ok(report)
}

/// Loads `report/report.json` from a finished run directory.
pub fn load_report(run_dir: &Path) -> Result<RunReport, PipelineError> {
    let path = run_dir.join("report").join("report.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Io {
        path,
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })
}

/// Validation outcome: config violations plus dataset and provider checks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub violations: Vec<String>,
    pub notes: Vec<String>,
}

impl Diagnostics {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn cmd_validate(config: &RunConfig) -> Diagnostics {
    let mut d = Diagnostics {
        violations: config.violations(),
        notes: Vec::new(),
    };
    if config.dataset_path.exists() {
        match load_corpus(config) {
            Ok(c) => d.notes.push(format!(
                "dataset: {} questions kept, {} filtered out",
                c.len(),
                c.filtered_out
            )),
            Err(e) => d.violations.push(format!("dataset: {e}")),
        }
    }
    let provider_checkable = match &config.provider {
        ProviderConfig::Replay { path } => path.exists(),
        _ => true,
    };
    if provider_checkable {
        match build_provider(config).and_then(|p| Ok(p.model_info()?)) {
            Ok(m) => {
                d.notes.push(format!("provider: {} with {} layers", m.name, m.layer_count));
                if let crate::config::LayerSelection::Explicit(l) = &config.layers {
                    if let Some(bad) = l.iter().find(|l| **l > m.layer_count) {
                        d.violations
                            .push(format!("layer {bad} exceeds the model's {} layers", m.layer_count));
                    }
                }
            }
            Err(e) => d.violations.push(format!("provider: {e}")),
        }
    }
    d
}
