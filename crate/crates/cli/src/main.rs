use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing::Level;

use layerwise_core::cluster::DEFAULT_FALLBACK_DIM;
use layerwise_core::config::{EmbedderConfig, LayerSelection, ProviderConfig, RunConfig, DEFAULT_SIM_LAYERS};
use layerwise_core::dataset::write_questions;
use layerwise_core::pipeline::{cmd_run, cmd_score, cmd_validate, load_report, RunOptions};
use layerwise_core::report::{render_plot_data, render_score_table, summarize_run, PlotKind};
use layerwise_core::simgen::synthetic_corpus;

#[derive(Parser, Debug)]
#[command(name = "layerwise", version, about = "Per-layer hallucination/creativity evaluation")]
struct Cli {
    /// Log more (-v debug, -vv trace)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate, judge, cluster, score and report
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Stop after this many generation units (resume by rerunning)
        #[arg(long, hide = true)]
        stop_after: Option<usize>,
    },
    /// Re-score a recorded response file without generating
    Score {
        /// Response records (JSONL)
        #[arg(long)]
        responses: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Check a configuration, its dataset and its provider
    Validate {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Print the summary, score table or a plot series of a finished run
    Report {
        /// Run directory, i.e. `<output_dir>/<run-id>`
        run_dir: PathBuf,
        /// Print the score table instead of the summary
        #[arg(long, conflicts_with = "kind")]
        table: bool,
        /// Print one plot series (creativity, hallucination, hcb, confidence)
        #[arg(long)]
        kind: Option<String>,
    },
    /// Write a synthetic question file for trying the simulator
    Synth {
        #[arg(long, default_value_t = 20)]
        questions: usize,
        #[arg(long, default_value_t = 3)]
        answers: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ProviderKind {
    Sim,
    Sidecar,
    Replay,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum EmbedderKind {
    Provider,
    Fallback,
}

/// Run configuration flags. Each overrides the matching field of `--config`.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// TOML run configuration
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    provider: Option<ProviderKind>,
    /// Sidecar base URL (also read from LAYERWISE_SIDECAR_URL)
    #[arg(long)]
    sidecar_url: Option<String>,
    /// Recorded responses served by the replay provider
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Layer count of the generated simulator fixture
    #[arg(long)]
    sim_layers: Option<usize>,
    #[arg(long)]
    min_answers: Option<usize>,
    #[arg(long)]
    sample_n: Option<usize>,
    #[arg(long)]
    samples_per_layer: Option<u32>,
    /// "all" or a comma-separated list
    #[arg(long)]
    layers: Option<String>,
    /// Comma-separated sampling temperatures
    #[arg(long, value_delimiter = ',')]
    temperatures: Option<Vec<f64>>,
    #[arg(long)]
    max_tokens: Option<u32>,
    #[arg(long)]
    tau: Option<f64>,
    /// Creativity weight; the hallucination weight defaults to 1 - w_c
    #[arg(long)]
    w_c: Option<f64>,
    /// Hallucination weight; the creativity weight defaults to 1 - w_h
    #[arg(long)]
    w_h: Option<f64>,
    #[arg(long, value_enum)]
    embedder: Option<EmbedderKind>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    prompt_template: Option<String>,
    /// Skip the P(True) confidence stage
    #[arg(long)]
    no_confidence: bool,
    /// Judgment samples per P(True) query
    #[arg(long)]
    ptrue_k: Option<u32>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

impl ConfigArgs {
    /// File values, then the environment, then flags.
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => {
                let dataset = self
                    .dataset
                    .clone()
                    .context("--dataset is required without --config")?;
                let provider = self.provider_config(None)?.context("--provider is required without --config")?;
                RunConfig::with_defaults(dataset, provider)
            }
        };
        cfg.apply_env();
        if let Some(p) = self.provider_config(Some(&cfg.provider))? {
            cfg.provider = p;
        }
        if let Some(d) = &self.dataset {
            cfg.dataset_path = d.clone();
        }
        if let Some(v) = self.min_answers {
            cfg.min_answers = v;
        }
        if self.sample_n.is_some() {
            cfg.sample_n = self.sample_n;
        }
        if let Some(v) = self.samples_per_layer {
            cfg.samples_per_layer = v;
        }
        if let Some(l) = &self.layers {
            cfg.layers = parse_layers(l)?;
        }
        if let Some(t) = &self.temperatures {
            cfg.temperatures = t.clone();
        }
        if let Some(v) = self.max_tokens {
            cfg.max_tokens = v;
        }
        if let Some(v) = self.tau {
            cfg.tau = v;
        }
        match (self.w_c, self.w_h) {
            (Some(c), Some(h)) => (cfg.weights.w_c, cfg.weights.w_h) = (c, h),
            (Some(c), None) => (cfg.weights.w_c, cfg.weights.w_h) = (c, 1.0 - c),
            (None, Some(h)) => (cfg.weights.w_c, cfg.weights.w_h) = (1.0 - h, h),
            (None, None) => {}
        }
        match (self.embedder, self.embed_dim) {
            (Some(EmbedderKind::Provider), _) => cfg.embedder = EmbedderConfig::Provider,
            (Some(EmbedderKind::Fallback), dim) => {
                cfg.embedder = EmbedderConfig::Fallback {
                    dim: dim.unwrap_or(match cfg.embedder {
                        EmbedderConfig::Fallback { dim } => dim,
                        EmbedderConfig::Provider => DEFAULT_FALLBACK_DIM,
                    }),
                }
            }
            (None, Some(dim)) => cfg.embedder = EmbedderConfig::Fallback { dim },
            (None, None) => {}
        }
        if let Some(v) = self.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.prompt_template {
            cfg.prompt_template = v.clone();
        }
        if self.no_confidence {
            cfg.confidence.enabled = false;
        }
        if let Some(k) = self.ptrue_k {
            cfg.confidence.k = k;
        }
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        Ok(cfg)
    }

    /// Provider from flags, starting from `current` when the kind matches.
    fn provider_config(&self, current: Option<&ProviderConfig>) -> Result<Option<ProviderConfig>> {
        let kind = match (self.provider, current) {
            (Some(k), _) => k,
            (None, Some(ProviderConfig::Sim { .. })) if self.sim_layers.is_some() => ProviderKind::Sim,
            (None, Some(ProviderConfig::Sidecar { .. })) if self.sidecar_url.is_some() => ProviderKind::Sidecar,
            (None, Some(ProviderConfig::Replay { .. })) if self.replay.is_some() => ProviderKind::Replay,
            (None, _) => return Ok(None),
        };
        Ok(Some(match kind {
            ProviderKind::Sim => {
                let (layers, config) = match current {
                    Some(ProviderConfig::Sim { num_layers, config }) => (*num_layers, config.clone()),
                    _ => (Some(DEFAULT_SIM_LAYERS), None),
                };
                match self.sim_layers {
                    Some(n) => ProviderConfig::Sim {
                        num_layers: Some(n),
                        config: None,
                    },
                    None => ProviderConfig::Sim {
                        num_layers: layers,
                        config,
                    },
                }
            }
            ProviderKind::Sidecar => {
                let (url, timeout_secs) = match current {
                    Some(ProviderConfig::Sidecar { url, timeout_secs }) => (Some(url.clone()), *timeout_secs),
                    _ => (None, 120),
                };
                let url = self
                    .sidecar_url
                    .clone()
                    .or_else(|| std::env::var(layerwise_core::provider::http::SIDECAR_URL_ENV).ok())
                    .or(url)
                    .context("sidecar provider needs --sidecar-url or LAYERWISE_SIDECAR_URL")?;
                ProviderConfig::Sidecar { url, timeout_secs }
            }
            ProviderKind::Replay => {
                let path = match (&self.replay, current) {
                    (Some(p), _) => p.clone(),
                    (None, Some(ProviderConfig::Replay { path })) => path.clone(),
                    (None, _) => bail!("replay provider needs --replay <responses.jsonl>"),
                };
                ProviderConfig::Replay { path }
            }
        }))
    }
}

fn parse_layers(s: &str) -> Result<LayerSelection> {
    if s.trim() == "all" {
        return Ok(LayerSelection::All);
    }
    let layers = s
        .split(',')
        .map(|p| p.trim().parse::<u32>().with_context(|| format!("bad layer {p:?}")))
        .collect::<Result<Vec<_>>>()?;
    Ok(LayerSelection::Explicit(layers))
}

fn print_outcome(run_dir: &Path, summary: &str) {
    print!("{summary}");
    println!("outputs: {}", run_dir.display());
}

fn real_main(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config, stop_after } => {
            let cfg = config.resolve()?;
            let out = cmd_run(
                &cfg,
                &RunOptions {
                    stop_after_units: stop_after,
                },
            )?;
            print_outcome(&out.run_dir, &summarize_run(&out.report));
        }
        Command::Score { responses, config } => {
            let cfg = config.resolve()?;
            let out = cmd_score(&cfg, &responses)?;
            print_outcome(&out.run_dir, &summarize_run(&out.report));
        }
        Command::Validate { config } => {
            let cfg = config.resolve()?;
            let diag = cmd_validate(&cfg);
            for note in &diag.notes {
                println!("note: {note}");
            }
            if diag.is_valid() {
                println!("valid");
            } else {
                for v in &diag.violations {
                    println!("violation: {v}");
                }
                return Ok(ExitCode::from(1));
            }
        }
        Command::Report { run_dir, table, kind } => {
            let report = load_report(&run_dir)?;
            if table {
                print!("{}", render_score_table(&report)?);
            } else if let Some(kind) = kind {
                let kind: PlotKind = kind.parse()?;
                print!("{}", render_plot_data(&report, kind)?);
            } else {
                print!("{}", summarize_run(&report));
            }
        }
        Command::Synth {
            questions,
            answers,
            seed,
            out,
        } => {
            write_questions(&out, &synthetic_corpus(questions, answers, seed))
                .with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {questions} questions to {}", out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => Level::INFO,
        1 => Level::DEBUG,
        _ => Level::TRACE,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .with_target(false)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .init();
    match real_main(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
