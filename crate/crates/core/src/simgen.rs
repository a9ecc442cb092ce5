//! Deterministic synthetic layer model.
//!
//! Each layer has a probability of answering correctly and a weight vector
//! over answer variants (gold answers wrapped in paraphrase templates). A
//! wrong answer is a word from a fixed pool that never matches the question's
//! gold answers. Higher temperature lowers the correctness probability and
//! flattens the variant weights. Every sample is a pure function of
//! `(seed, question id, layer, sample index, temperature)`.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confidence::PTrueQuery;
use crate::dataset::QuestionRecord;
use crate::judge::judge_response;
use crate::provider::GenerationRequest;
use crate::util::SeedMixer;

/// Paraphrase templates; the first is the bare answer.
pub const PARAPHRASE_TEMPLATES: [&str; 3] = ["{answer}", "It is {answer}.", "The answer is {answer}"];

/// Wrong-answer vocabulary. Entries that would match a question's gold
/// answers are dropped per question.
pub const HALLUCINATION_WORDS: [&str; 40] = [
    "atlantis", "el dorado", "lemuria", "hyperborea", "shangri-la", "avalon", "camelot", "lilliput",
    "narnia", "gondor", "mordor", "xanadu", "utopia", "arcadia", "erewhon", "oz", "zembla",
    "ruritania", "freedonia", "genovia", "wakanda", "latveria", "gotham", "metropolis", "springfield",
    "duckburg", "bedrock", "vulcan", "krypton", "tatooine", "dagobah", "hoth", "endor", "arrakis",
    "solaris", "pandora", "cybertron", "thra", "eternia", "melnibone",
];

const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("no profile for layer {0}")]
    MissingProfile(u32),
    #[error("layer profiles must cover 1..={expected} exactly once each")]
    NonContiguousLayers { expected: usize },
    #[error("layer {layer}: {reason}")]
    InvalidProfile { layer: u32, reason: String },
    #[error("question {0} has no usable gold answers")]
    NoGoldAnswers(String),
    #[error("fixture needs at least 4 layers, got {0}")]
    TooFewLayers(usize),
}

/// How the simulator answers P(True) queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PTrueMode {
    /// Return k sampled single-token judgments.
    #[default]
    Sampled,
    /// Return the judgment probability directly.
    Probability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub layer: u32,
    pub p_correct: f64,
    /// Weights over variant slots; slot `s` addresses variant `s % variants`.
    pub diversity_weights: Vec<f64>,
    pub hallucination_pool_size: usize,
    /// Probability of a "True" self-judgment; defaults to `p_correct`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_true: Option<f64>,
}

impl LayerProfile {
    pub fn judgment_probability(&self) -> f64 {
        self.p_true.unwrap_or(self.p_correct)
    }

    fn validate(&self) -> Result<(), SimError> {
        let bad = |reason: &str| SimError::InvalidProfile {
            layer: self.layer,
            reason: reason.to_string(),
        };
        if !(0.0..=1.0).contains(&self.p_correct) {
            return Err(bad("p_correct outside [0, 1]"));
        }
        if let Some(p) = self.p_true {
            if !(0.0..=1.0).contains(&p) {
                return Err(bad("p_true outside [0, 1]"));
            }
        }
        if self.diversity_weights.is_empty() || self.diversity_weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(bad("diversity weights must be non-empty and non-negative"));
        }
        if (self.diversity_weights.iter().sum::<f64>() - 1.0).abs() > SUM_TOLERANCE {
            return Err(bad("diversity weights must sum to 1"));
        }
        if self.hallucination_pool_size == 0 {
            return Err(bad("hallucination pool must be non-empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub layer_profiles: Vec<LayerProfile>,
    pub temperature_effect: f64,
    pub seed: u64,
    #[serde(default)]
    pub ptrue_mode: PTrueMode,
}

impl SimConfig {
    pub fn num_layers(&self) -> usize {
        self.layer_profiles.len()
    }

    pub fn profile(&self, layer: u32) -> Result<&LayerProfile, SimError> {
        self.layer_profiles
            .get((layer as usize).wrapping_sub(1))
            .filter(|p| p.layer == layer)
            .ok_or(SimError::MissingProfile(layer))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let expected = self.layer_profiles.len();
        if expected == 0
            || self
                .layer_profiles
                .iter()
                .enumerate()
                .any(|(i, p)| p.layer as usize != i + 1)
        {
            return Err(SimError::NonContiguousLayers { expected });
        }
        self.layer_profiles.iter().try_for_each(LayerProfile::validate)
    }
}

/// Correctness probability after the temperature adjustment.
pub fn effective_p_correct(p_correct: f64, temperature: f64, effect: f64) -> f64 {
    p_correct.powf(1.0 + effect * temperature)
}

/// Variant weights flattened by temperature (power transform, renormalized).
pub fn effective_weights(weights: &[f64], temperature: f64, effect: f64) -> Vec<f64> {
    let exponent = 1.0 / (1.0 + effect * temperature);
    let raised: Vec<f64> = weights.iter().map(|w| if *w > 0.0 { w.powf(exponent) } else { 0.0 }).collect();
    let total: f64 = raised.iter().sum();
    raised.into_iter().map(|w| w / total).collect()
}

/// All paraphrases of the gold answers, template-major.
pub fn paraphrase_variants(gold_answers: &[String]) -> Vec<String> {
    PARAPHRASE_TEMPLATES
        .iter()
        .flat_map(|tmpl| gold_answers.iter().map(move |a| tmpl.replace("{answer}", a.trim())))
        .collect()
}

/// Wrong answers that the judge rejects for this question in every template.
fn hallucination_pool(question: &QuestionRecord, size: usize) -> Vec<String> {
    HALLUCINATION_WORDS
        .iter()
        .filter(|w| {
            PARAPHRASE_TEMPLATES.iter().all(|tmpl| {
                let text = tmpl.replace("{answer}", w);
                !judge_response(&text, &question.gold_answers)
                    .map(|v| v.correct)
                    .unwrap_or(true)
            })
        })
        .take(size)
        .map(|w| w.to_string())
        .collect()
}

fn sample_rng(config: &SimConfig, request_seed: Option<u64>, qid: &str, layer: u32, sample_idx: u32, t: f64) -> ChaCha8Rng {
    let seed = SeedMixer::new(config.seed)
        .u64(request_seed.unwrap_or(0))
        .str(qid)
        .u64(u64::from(layer))
        .u64(u64::from(sample_idx))
        .f64(t)
        .finish();
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws `request.n` answers for one (question, layer, temperature) cell.
/// Sample indices run from 1 to `n`.
pub fn sim_generate(question: &QuestionRecord, request: &GenerationRequest, config: &SimConfig) -> Result<Vec<String>, SimError> {
    let profile = config.profile(request.layer)?;
    if question.gold_answers.is_empty() {
        return Err(SimError::NoGoldAnswers(question.id.clone()));
    }
    let t = request.temperature;
    let p_correct = effective_p_correct(profile.p_correct, t, config.temperature_effect);
    let variants = paraphrase_variants(&question.gold_answers);
    let mut folded = vec![0.0; variants.len()];
    for (slot, w) in effective_weights(&profile.diversity_weights, t, config.temperature_effect)
        .into_iter()
        .enumerate()
    {
        folded[slot % variants.len()] += w;
    }
    let picker = WeightedIndex::new(&folded).map_err(|e| SimError::InvalidProfile {
        layer: profile.layer,
        reason: e.to_string(),
    })?;
    let pool = hallucination_pool(question, profile.hallucination_pool_size);
    if pool.is_empty() {
        return Err(SimError::InvalidProfile {
            layer: profile.layer,
            reason: format!("no hallucination word avoids the gold answers of {}", question.id),
        });
    }

    Ok((1..=request.n)
        .map(|j| {
            let mut rng = sample_rng(config, request.seed, &question.id, request.layer, j, t);
            if rng.gen::<f64>() < p_correct {
                variants[picker.sample(&mut rng)].clone()
            } else {
                let word = &pool[rng.gen_range(0..pool.len())];
                let tmpl = PARAPHRASE_TEMPLATES[rng.gen_range(0..PARAPHRASE_TEMPLATES.len())];
                tmpl.replace("{answer}", word)
            }
        })
        .collect())
}

const TRUE_JUDGMENTS: [&str; 3] = ["B", "(B) True", "True"];
const FALSE_JUDGMENTS: [&str; 3] = ["A", "(A) False", "False"];

/// `k` single-token self-judgments at the query's layer, each "True" with the
/// layer's judgment probability.
pub fn sim_judgments(query: &PTrueQuery, config: &SimConfig) -> Result<Vec<String>, SimError> {
    let p = config.profile(query.layer)?.judgment_probability();
    let base = SeedMixer::new(config.seed)
        .str(&query.question)
        .str(&query.possible_answer)
        .u64(u64::from(query.layer))
        .u64(query.nonce)
        .finish();
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    Ok((0..query.k)
        .map(|_| {
            let yes = rng.gen::<f64>() < p;
            let forms = if yes { &TRUE_JUDGMENTS } else { &FALSE_JUDGMENTS };
            forms[rng.gen_range(0..forms.len())].to_string()
        })
        .collect())
}

/// Geometric weights `r^s` over `slots` slots, normalized.
pub fn geometric_weights(ratio: f64, slots: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..slots).map(|s| ratio.powi(s as i32)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Number of variant slots in generated fixtures (3 answers x 3 templates).
pub const FIXTURE_SLOTS: usize = 9;

/// Expected number of distinct variants hit by `draws` samples when each
/// sample is correct with `p_correct` and then picks slot `s` with `weights[s]`.
/// With the fallback embedder every variant of a question is its own cluster,
/// so this is the expected cluster count of one cell.
pub fn expected_cluster_count(p_correct: f64, weights: &[f64], draws: u32) -> f64 {
    weights
        .iter()
        .map(|w| 1.0 - (1.0 - p_correct * w).powi(draws as i32))
        .sum()
}

// Shape of the generated trade-off schedule.
const FIXTURE_DRAWS: u32 = 50;
const FIXTURE_REF_TEMPERATURE: f64 = 0.8;
const FIXTURE_EFFECT: f64 = 0.5;
const FIXTURE_PEAK: f64 = 0.65;
const P_FIRST: f64 = 0.45;
const P_PEAK: f64 = 0.93;
const P_LAST: f64 = 0.97;
const P_CURVE: f64 = 1.75;
const COUNT_HEADROOM: f64 = 0.97;
const COUNT_DROP_BEFORE_PEAK: f64 = 2.0;
const COUNT_LAST: f64 = 1.2;

/// Geometric ratio whose expected cluster count at the reference temperature
/// equals `target`. The count grows with the ratio, so bisection suffices.
fn ratio_for_count(p_correct: f64, target: f64) -> f64 {
    let count = |r: f64| {
        let p = effective_p_correct(p_correct, FIXTURE_REF_TEMPERATURE, FIXTURE_EFFECT);
        let w = effective_weights(&geometric_weights(r, FIXTURE_SLOTS), FIXTURE_REF_TEMPERATURE, FIXTURE_EFFECT);
        expected_cluster_count(p, &w, FIXTURE_DRAWS)
    };
    let (mut lo, mut hi) = (1e-6, 1.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if count(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// A layer schedule where creativity and hallucination both fall with depth.
///
/// Up to the peak layer (about two thirds of the way down) the correct rate
/// climbs quickly while the expected cluster count declines slowly; past it
/// the correct rate barely moves while the count collapses toward one. The
/// balanced score therefore peaks at an interior layer at both default
/// temperatures.
pub fn make_tradeoff_fixture(num_layers: usize, seed: u64) -> Result<SimConfig, SimError> {
    if num_layers < 4 {
        return Err(SimError::TooFewLayers(num_layers));
    }
    let last = num_layers - 1;
    let peak = ((FIXTURE_PEAK * last as f64).round() as usize).clamp(1, last - 1);
    let p_at = |i: usize| {
        if i <= peak {
            P_FIRST + (P_PEAK - P_FIRST) * (i as f64 / peak as f64).powf(P_CURVE)
        } else {
            P_PEAK + (P_LAST - P_PEAK) * (i - peak) as f64 / (last - peak) as f64
        }
    };
    let uniform = vec![1.0 / FIXTURE_SLOTS as f64; FIXTURE_SLOTS];
    let first_count = expected_cluster_count(
        effective_p_correct(P_FIRST, FIXTURE_REF_TEMPERATURE, FIXTURE_EFFECT),
        &uniform,
        FIXTURE_DRAWS,
    ) * COUNT_HEADROOM;
    let peak_count = first_count - COUNT_DROP_BEFORE_PEAK;
    let count_at = |i: usize| {
        if i <= peak {
            first_count - (first_count - peak_count) * i as f64 / peak as f64
        } else {
            peak_count - (peak_count - COUNT_LAST) * (i - peak) as f64 / (last - peak) as f64
        }
    };
    let layer_profiles = (0..num_layers)
        .map(|i| LayerProfile {
            layer: i as u32 + 1,
            p_correct: p_at(i),
            diversity_weights: geometric_weights(ratio_for_count(p_at(i), count_at(i)), FIXTURE_SLOTS),
            hallucination_pool_size: 30,
            p_true: None,
        })
        .collect();
    Ok(SimConfig {
        layer_profiles,
        temperature_effect: FIXTURE_EFFECT,
        seed,
        ptrue_mode: PTrueMode::Sampled,
    })
}

/// A synthetic corpus whose gold answers never collide with the
/// hallucination vocabulary or the paraphrase templates.
pub fn synthetic_corpus(num_questions: usize, answers_per_question: usize, seed: u64) -> Vec<QuestionRecord> {
    const STEMS: [&str; 24] = [
        "paris", "rome", "berlin", "madrid", "lisbon", "vienna", "prague", "warsaw", "oslo", "helsinki",
        "dublin", "athens", "cairo", "lima", "quito", "bogota", "nairobi", "dakar", "hanoi", "manila",
        "seoul", "kyoto", "perth", "boston",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(SeedMixer::new(seed).str("corpus").finish());
    (0..num_questions)
        .map(|q| {
            let picked = rand::seq::index::sample(&mut rng, STEMS.len(), answers_per_question.min(STEMS.len()));
            let answers = picked.into_iter().map(|i| STEMS[i].to_string()).collect();
            QuestionRecord::new(
                format!("syn-{q:04}"),
                format!("Name a city matching clue number {q}."),
                answers,
                "synthetic",
            )
        })
        .collect()
}
