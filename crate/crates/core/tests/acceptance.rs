//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Runs on the simulator and fallback embedder only.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use layerwise_core::cluster::{greedy_cluster, FallbackEmbedder};
use layerwise_core::confidence::{p_true, PTrueQuery};
use layerwise_core::config::{ProviderConfig, RunConfig};
use layerwise_core::dataset::write_questions;
use layerwise_core::judge::{summarize_labels, CorrectnessLabel};
use layerwise_core::pipeline::{cmd_run, cmd_score, PipelineError, RunOptions};
use layerwise_core::provider::SimProvider;
use layerwise_core::report::{plot_series, spearman, PlotKind, RunReport};
use layerwise_core::scoring::{hallucination_score, hcb_score, minmax_normalize, ScoreWeights};
use layerwise_core::simgen::{synthetic_corpus, LayerProfile, PTrueMode, SimConfig};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------- hallucination

fn hallucination_exact() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for trial in 0..1000 {
        let total: usize = rng.gen_range(1..=500);
        let errors: usize = rng.gen_range(0..=total);
        let labels: Vec<CorrectnessLabel> = (0..total)
            .map(|i| CorrectnessLabel {
                question_id: format!("q{}", i % 7),
                layer: 3,
                sample_idx: i as u32 + 1,
                correct: i >= errors,
                matched_answer: None,
            })
            .collect();
        let summary = summarize_labels(&labels, 3).map_err(|e| e.to_string())?;
        let got = hallucination_score(&summary).map_err(|e| e.to_string())?;
        let want = errors as f64 / total as f64;
        worst = worst.max((got - want).abs());
        check((got - want).abs() <= 1e-12, format!("trial {trial}: {errors}/{total} gave {got}"))?;
    }
    Ok(format!("1000 pairs, max |diff| = {worst:e}"))
}

// ---------------------------------------------------------------- clustering oracle

/// Independent reading of the clustering procedure: lowercase, collapse
/// whitespace, count FNV-1a-hashed character 3-grams, compare exactly.
mod oracle {
    use std::collections::HashMap;

    const DIM: u64 = 256;

    fn fnv(s: &str) -> u64 {
        let mut h: u64 = 14695981039346656037;
        for b in s.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(1099511628211);
        }
        h
    }

    fn grams(text: &str) -> HashMap<u64, i64> {
        let cleaned = text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ");
        let chars: Vec<char> = cleaned.chars().collect();
        let mut out = HashMap::new();
        if chars.len() < 3 {
            *out.entry(fnv(&cleaned) % DIM).or_insert(0) += 1;
        } else {
            for i in 0..chars.len() - 2 {
                let g: String = chars[i..i + 3].iter().collect();
                *out.entry(fnv(&g) % DIM).or_insert(0) += 1;
            }
        }
        out
    }

    /// cos(a, b) >= 4/5, decided in integers.
    fn similar(a: &HashMap<u64, i64>, b: &HashMap<u64, i64>) -> bool {
        let dot: i64 = a.iter().map(|(k, v)| v * b.get(k).copied().unwrap_or(0)).sum();
        let na: i64 = a.values().map(|v| v * v).sum();
        let nb: i64 = b.values().map(|v| v * v).sum();
        dot > 0 && 25 * (dot as i128) * (dot as i128) >= 16 * (na as i128) * (nb as i128)
    }

    /// (assignment, representative input indices)
    pub fn cluster(texts: &[String]) -> (Vec<usize>, Vec<usize>) {
        let vecs: Vec<_> = texts.iter().map(|t| grams(t)).collect();
        let mut reps: Vec<usize> = Vec::new();
        let mut assignment = Vec::new();
        for i in 0..texts.len() {
            let mut found = None;
            for (r, &rep) in reps.iter().enumerate() {
                if similar(&vecs[i], &vecs[rep]) {
                    found = Some(r);
                    break;
                }
            }
            match found {
                Some(r) => assignment.push(r),
                None => {
                    reps.push(i);
                    assignment.push(reps.len() - 1);
                }
            }
        }
        (assignment, reps)
    }
}

fn random_texts(rng: &mut ChaCha8Rng) -> Vec<String> {
    const WORDS: [&str; 10] = ["paris", "the city", "Paris", "rome", "it is", "answer", "lima", "a", "of light", "capital"];
    let n = rng.gen_range(0..=20);
    let mut out: Vec<String> = Vec::with_capacity(n);
    for _ in 0..n {
        let text = if !out.is_empty() && rng.gen_bool(0.4) {
            // a small edit of an earlier text lands near the threshold
            let mut chars: Vec<char> = out[rng.gen_range(0..out.len())].chars().collect();
            let pos = rng.gen_range(0..=chars.len());
            match rng.gen_range(0..3) {
                0 => chars.insert(pos, (b'a' + rng.gen_range(0..6)) as char),
                1 if chars.len() > 1 => {
                    chars.remove(pos.min(chars.len() - 1));
                }
                _ => chars.insert(pos, ' '),
            }
            chars.into_iter().collect()
        } else {
            let k = rng.gen_range(1..=3);
            (0..k).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
        };
        out.push(if text.trim().is_empty() { "x".to_string() } else { text });
    }
    out
}

fn cluster_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let embedder = FallbackEmbedder::default();
    let mut sizes = 0;
    for trial in 0..1000 {
        let texts = random_texts(&mut rng);
        sizes += texts.len();
        let got = greedy_cluster(&texts, &embedder, 0.8).map_err(|e| format!("trial {trial}: {e}"))?;
        let (assignment, reps) = oracle::cluster(&texts);
        let got_reps: Vec<usize> = got.representatives.iter().map(|r| r.input_index).collect();
        check(
            got.assignment == assignment && got_reps == reps,
            format!("trial {trial}: {texts:?}\n  got {:?} / {got_reps:?}\n  want {assignment:?} / {reps:?}", got.assignment),
        )?;
    }
    Ok(format!("1000 trials ({sizes} strings), counts and assignments identical"))
}

// ---------------------------------------------------------------- hcb

fn hcb_formula() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for trial in 0..1000 {
        let s_c: f64 = rng.gen();
        let s_h: f64 = rng.gen();
        let w_c: f64 = rng.gen();
        let w = ScoreWeights::new(w_c, 1.0 - w_c).map_err(|e| e.to_string())?;
        let got = hcb_score(s_c, s_h, w).map_err(|e| e.to_string())?;
        let want = w_c * s_c + (1.0 - w_c) * (1.0 - s_h);
        worst = worst.max((got - want).abs());
        check((got - want).abs() <= 1e-9, format!("trial {trial}: {got} vs {want}"))?;

        let step = 1e-3;
        if s_h + step <= 1.0 && w.w_h > 0.0 {
            check(hcb_score(s_c, s_h + step, w).unwrap() < got, format!("trial {trial}: not decreasing in s_h"))?;
        }
        if s_c + step <= 1.0 && w.w_c > 0.0 {
            check(hcb_score(s_c + step, s_h, w).unwrap() > got, format!("trial {trial}: not increasing in s_c"))?;
        }
        let swapped = ScoreWeights::new(w.w_h, w.w_c).unwrap();
        let mirrored = hcb_score(1.0 - s_h, 1.0 - s_c, swapped).unwrap();
        check((mirrored - got).abs() <= 1e-12, format!("trial {trial}: weight symmetry broken"))?;
    }
    Ok(format!("1000 triples, max |diff| = {worst:e}, monotonicity and symmetry hold"))
}

// ---------------------------------------------------------------- min-max

fn minmax() -> Outcome {
    check(minmax_normalize(&[2.0, 5.0, 8.0]) == vec![0.0, 0.5, 1.0], "[2,5,8]")?;
    check(minmax_normalize(&[7.0, 7.0, 7.0]) == vec![0.5; 3], "constant vector")?;
    check(minmax_normalize(&[3.0]) == vec![0.5], "singleton")?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = ScoreWeights::default();
    for trial in 0..200 {
        let n = rng.gen_range(2..=32);
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..20.0)).collect();
        let s_h: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let a = rng.gen_range(0.01..100.0);
        let b = rng.gen_range(-50.0..50.0);
        let moved: Vec<f64> = raw.iter().map(|v| a * v + b).collect();
        let (x, y) = (minmax_normalize(&raw), minmax_normalize(&moved));
        let rank = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]).then(i.cmp(&j)));
            idx
        };
        check(rank(&x) == rank(&y), format!("trial {trial}: ranking changed"))?;
        check(
            x.iter().zip(&y).all(|(p, q)| (p - q).abs() < 1e-9),
            format!("trial {trial}: normalized values moved"),
        )?;
        let argmax = |norm: &[f64]| {
            let h: Vec<f64> = norm.iter().zip(&s_h).map(|(c, h)| hcb_score(*c, *h, w).unwrap()).collect();
            (0..h.len()).fold(0, |b, i| if h[i] > h[b] { i } else { b })
        };
        check(argmax(&x) == argmax(&y), format!("trial {trial}: hcb argmax changed"))?;
    }
    Ok("exact examples, 200 affine transforms rank-invariant".into())
}

// ---------------------------------------------------------------- defaults

fn defaults() -> Outcome {
    let toml = "dataset_path = \"q.jsonl\"\n[provider]\nkind = \"sim\"\n";
    let parsed = RunConfig::from_toml_str(toml, Path::new("defaults.toml")).map_err(|e| e.to_string())?;
    for cfg in [RunConfig::with_defaults("q.jsonl", ProviderConfig::sim()), parsed] {
        check(cfg.samples_per_layer == 50, "samples per layer")?;
        check(cfg.max_tokens == 50, "max tokens")?;
        check(cfg.tau == 0.8, "tau")?;
        check(cfg.weights.w_c == 0.5 && cfg.weights.w_h == 0.5, "weights")?;
        check(cfg.temperatures == [0.6, 1.0], "temperatures")?;
        check(cfg.min_answers == 3, "min answers")?;
    }
    Ok("D=50, max_tokens=50, tau=0.8, w=0.5/0.5, t={0.6,1.0}, min_answers=3".into())
}

// ---------------------------------------------------------------- pipeline runs

fn fixture_config(root: &Path, questions: usize) -> RunConfig {
    let data = root.join("questions.jsonl");
    if !data.exists() {
        std::fs::create_dir_all(root).expect("create root");
        write_questions(&data, &synthetic_corpus(questions, 3, 7)).expect("write corpus");
    }
    let mut cfg = RunConfig::with_defaults(
        &data,
        ProviderConfig::Sim {
            num_layers: Some(12),
            config: None,
        },
    );
    cfg.output_dir = root.join("out");
    cfg
}

fn tradeoff(root: &Path) -> Outcome {
    let cfg = fixture_config(root, 20);
    let started = Instant::now();
    let out = cmd_run(&cfg, &RunOptions::default()).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let report = &out.report;
    let mut details = Vec::new();
    for run in &report.per_layer_scores {
        let s_c: Vec<f64> = run.per_layer.iter().map(|l| l.s_c_raw).collect();
        let s_h: Vec<f64> = run.per_layer.iter().map(|l| l.s_h).collect();
        let rho = spearman(&s_c, &s_h).ok_or("constant series")?;
        let argmax = run.argmax_layer().ok_or("empty run")?;
        details.push(format!("t={} rho={rho:.3} argmax={argmax}", run.temperature));
        check(rho >= 0.8, format!("t={}: rho {rho:.3} < 0.8", run.temperature))?;
        check(argmax < 12, format!("t={}: argmax is the final layer", run.temperature))?;
    }
    check(report.per_layer_scores.len() == 2, "expected two temperature runs")?;
    check(report.stability.agree, format!("argmax disagrees: {:?}", report.stability.per_run))?;
    check(report.optimal_layer < 12, "optimal layer is the final layer")?;

    let series = |kind| -> Result<Vec<f64>, String> {
        Ok(plot_series(report, kind).map_err(|e| e.to_string())?.iter().map(|p| p.value).collect())
    };
    let plotted = spearman(&series(PlotKind::Creativity)?, &series(PlotKind::Hallucination)?).unwrap_or(0.0);
    check(plotted > 0.0, "plot series not positively correlated")?;
    check(elapsed <= Duration::from_secs(300), format!("took {elapsed:?}"))?;
    Ok(format!("{}, optimal {}, {elapsed:.1?}", details.join(", "), report.optimal_layer))
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("read dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).expect("under root").to_path_buf();
                out.insert(rel, std::fs::read(&path).expect("read file"));
            }
        }
    }
    out
}

fn resume(root: &Path) -> Outcome {
    let cfg = fixture_config(root, 20);
    let run_dir = cfg.run_dir();
    let _ = std::fs::remove_dir_all(&run_dir);
    cmd_run(&cfg, &RunOptions::default()).map_err(|e| e.to_string())?;
    let clean = snapshot(&run_dir);
    std::fs::remove_dir_all(&run_dir).map_err(|e| e.to_string())?;

    let total = 20 * 12 * 2;
    match cmd_run(
        &cfg,
        &RunOptions {
            stop_after_units: Some(total / 2),
        },
    ) {
        Err(PipelineError::Interrupted { completed, .. }) => {
            check(completed == total / 2, format!("interrupted after {completed}"))?
        }
        other => return Err(format!("expected an interruption, got {:?}", other.map(|o| o.run_dir))),
    }
    check(!run_dir.join("scores").exists(), "scores written before generation finished")?;
    cmd_run(&cfg, &RunOptions::default()).map_err(|e| e.to_string())?;
    let resumed = snapshot(&run_dir);
    let differing: Vec<_> = clean
        .keys()
        .chain(resumed.keys())
        .filter(|k| clean.get(*k) != resumed.get(*k))
        .collect();
    check(differing.is_empty(), format!("files differ: {differing:?}"))?;
    Ok(format!("interrupted at {}/{total} units; {} files byte-identical", total / 2, clean.len()))
}

fn replay(root: &Path) -> Outcome {
    let cfg = fixture_config(root, 20);
    let live = cmd_run(&cfg, &RunOptions::default()).map_err(|e| e.to_string())?;
    let recorded = live.run_dir.join("responses").join("responses.jsonl");

    // offline re-scoring of the recording
    let rescored = cmd_score(&cfg, &recorded).map_err(|e| e.to_string())?;
    let worst_score = max_column_diff(&live.report, &rescored.report, true)?;

    // the recording served back through the replay provider
    let mut replay_cfg = cfg.clone();
    replay_cfg.provider = ProviderConfig::Replay { path: recorded };
    replay_cfg.confidence.enabled = false;
    let replayed = cmd_run(&replay_cfg, &RunOptions::default()).map_err(|e| e.to_string())?;
    let worst_replay = max_column_diff(&live.report, &replayed.report, false)?;
    check(worst_score <= 1e-6 && worst_replay <= 1e-6, "columns differ by more than 1e-6")?;
    Ok(format!(
        "re-score max diff {worst_score:e} (all columns), replay provider max diff {worst_replay:e}"
    ))
}

fn max_column_diff(a: &RunReport, b: &RunReport, with_confidence: bool) -> Result<f64, String> {
    check(a.per_layer_scores.len() == b.per_layer_scores.len(), "run count differs")?;
    let mut worst = 0.0f64;
    for (ra, rb) in a.per_layer_scores.iter().zip(&b.per_layer_scores) {
        check(ra.temperature == rb.temperature && ra.layers() == rb.layers(), "layer sets differ")?;
        for (x, y) in ra.per_layer.iter().zip(&rb.per_layer) {
            for (p, q) in [(x.s_h, y.s_h), (x.s_c_raw, y.s_c_raw), (x.s_c_norm, y.s_c_norm), (x.hcb, y.hcb)] {
                worst = worst.max((p - q).abs());
            }
            if with_confidence {
                match (x.confidence, y.confidence) {
                    (Some(p), Some(q)) => worst = worst.max((p - q).abs()),
                    (None, None) => {}
                    _ => return Err(format!("confidence missing at layer {}", x.layer)),
                }
            }
        }
    }
    check(a.optimal_layer == b.optimal_layer, "optimal layer differs")?;
    Ok(worst)
}

// ---------------------------------------------------------------- P(True)

fn ptrue_sampled() -> Outcome {
    let mut summary = Vec::new();
    for p in [0.1, 0.5, 0.9] {
        let sim = SimProvider::new(SimConfig {
            layer_profiles: vec![LayerProfile {
                layer: 1,
                p_correct: 0.5,
                diversity_weights: vec![1.0],
                hallucination_pool_size: 5,
                p_true: Some(p),
            }],
            temperature_effect: 0.0,
            seed: 17,
            ptrue_mode: PTrueMode::Sampled,
        })
        .map_err(|e| e.to_string())?;
        let bound = 3.0 * (p * (1.0 - p) / 200.0f64).sqrt();
        let mut inside = 0;
        for rep in 0..100u64 {
            let query = PTrueQuery {
                question: "Which city hosts the fixture?".into(),
                possible_answer: "Lima".into(),
                layer: 1,
                k: 200,
                nonce: rep,
            };
            let est = p_true(&query, &sim).map_err(|e| e.to_string())?;
            if (est - p).abs() <= bound {
                inside += 1;
            }
        }
        summary.push(format!("p={p}: {inside}/100"));
        check(inside >= 99, format!("p={p}: only {inside}/100 within 3 sigma"))?;
    }
    Ok(summary.join(", "))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("hallucination score is errors/total", Box::new(hallucination_exact)),
        ("greedy clustering matches the naive oracle", Box::new(cluster_oracle)),
        ("hcb formula, monotonicity, symmetry", Box::new(hcb_formula)),
        ("min-max normalization", Box::new(minmax)),
        ("default run configuration", Box::new(defaults)),
        ("trade-off fixture shape", Box::new(|| tradeoff(&tmp.path().join("tradeoff")))),
        ("interrupted run resumes byte-identically", Box::new(|| resume(&tmp.path().join("resume")))),
        ("replayed responses score like the live run", Box::new(|| replay(&tmp.path().join("replay")))),
        ("sampled P(True) within 3 sigma", Box::new(ptrue_sampled)),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{:.1?}]", started.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
