//! Question files: loading, validation, answer-count filtering and sampling.
//!
//! A question file is UTF-8 with one JSON record per line:
//!
//! ```text
//! {"id": "tqa-1", "question": "...", "answers": ["a", "b", "c"], "dataset": "triviaqa"}
//! ```
//!
//! Gold answers are kept verbatim apart from dropping duplicates that only
//! differ in case or surrounding whitespace.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default answer-count floor: questions need three or more gold answers.
pub const DEFAULT_MIN_ANSWERS: usize = 3;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read question file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed question record: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}:{line}: duplicate question id {id:?}")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },
    #[error("no questions in {path} have at least {min_answers} distinct answers ({filtered} filtered out)")]
    NoSurvivors {
        path: PathBuf,
        min_answers: usize,
        filtered: usize,
    },
    #[error("min_answers must be positive")]
    ZeroMinAnswers,
    #[error("cannot sample {requested} questions from a corpus of {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("sample size must be positive")]
    ZeroSample,
}

/// One QA item with all of its accepted answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    #[serde(rename = "question")]
    pub text: String,
    #[serde(rename = "answers")]
    pub gold_answers: Vec<String>,
    #[serde(rename = "dataset")]
    pub dataset_tag: String,
}

impl QuestionRecord {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        gold_answers: Vec<String>,
        dataset_tag: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            gold_answers: dedup_answers(gold_answers),
            dataset_tag: dataset_tag.into(),
        }
    }
}

/// An ordered, immutable set of questions that passed the answer filter.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub questions: Vec<QuestionRecord>,
    pub source_path: String,
    pub min_answers_applied: usize,
    /// Records that were well-formed but had fewer than `min_answers_applied` answers.
    pub filtered_out: usize,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&QuestionRecord> {
        self.questions.iter().find(|q| q.id == id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &QuestionRecord> {
        self.questions.iter()
    }

    /// Dataset tag shared by the questions, or `"mixed"`.
    pub fn dataset_tag(&self) -> String {
        let mut tags = self.questions.iter().map(|q| q.dataset_tag.as_str());
        match tags.next() {
            Some(first) if tags.all(|t| t == first) => first.to_string(),
            Some(_) => "mixed".to_string(),
            None => String::new(),
        }
    }

    /// Re-applies the answer-count filter. A no-op for a floor at or below the
    /// one already applied.
    pub fn refilter(&self, min_answers: usize) -> Corpus {
        let before = self.questions.len();
        let questions: Vec<_> = self
            .questions
            .iter()
            .filter(|q| q.gold_answers.len() >= min_answers)
            .cloned()
            .collect();
        Corpus {
            filtered_out: self.filtered_out + (before - questions.len()),
            questions,
            source_path: self.source_path.clone(),
            min_answers_applied: self.min_answers_applied.max(min_answers),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    question: String,
    answers: Vec<String>,
    dataset: String,
}

/// Drops answers that repeat an earlier one after case-folding and trimming.
fn dedup_answers(answers: Vec<String>) -> Vec<String> {
    let mut seen = HashSet::new();
    answers
        .into_iter()
        .filter(|a| {
            let key = a.trim().to_lowercase();
            !key.is_empty() && seen.insert(key)
        })
        .collect()
}

/// Parses every record in `path` without filtering.
pub fn read_questions(path: &Path) -> Result<Vec<QuestionRecord>, DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| DatasetError::Malformed {
            path: path.to_path_buf(),
            line: line_no,
            reason,
        };
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if raw.id.trim().is_empty() {
            return Err(malformed("empty id".into()));
        }
        if raw.question.trim().is_empty() {
            return Err(malformed("empty question text".into()));
        }
        if !ids.insert(raw.id.clone()) {
            return Err(DatasetError::DuplicateId {
                path: path.to_path_buf(),
                line: line_no,
                id: raw.id,
            });
        }
        out.push(QuestionRecord::new(raw.id, raw.question, raw.answers, raw.dataset));
    }
    Ok(out)
}

/// Loads a question file and keeps records with at least `min_answers`
/// distinct gold answers, preserving file order.
pub fn ingest_dataset(path: &Path, min_answers: usize) -> Result<Corpus, DatasetError> {
    if min_answers == 0 {
        return Err(DatasetError::ZeroMinAnswers);
    }
    let records = read_questions(path)?;
    let total = records.len();
    let questions: Vec<_> = records
        .into_iter()
        .filter(|q| q.gold_answers.len() >= min_answers)
        .collect();
    let filtered = total - questions.len();
    if filtered > 0 {
        tracing::info!(
            path = %path.display(),
            filtered,
            kept = questions.len(),
            min_answers,
            "questions below the answer floor were filtered out"
        );
    }
    if questions.is_empty() {
        return Err(DatasetError::NoSurvivors {
            path: path.to_path_buf(),
            min_answers,
            filtered,
        });
    }
    Ok(Corpus {
        questions,
        source_path: path.display().to_string(),
        min_answers_applied: min_answers,
        filtered_out: filtered,
    })
}

/// Seeded uniform draw of `n` questions without replacement. The subset keeps
/// the corpus order.
pub fn sample_corpus(corpus: &Corpus, n: usize, seed: u64) -> Result<Corpus, DatasetError> {
    if n == 0 {
        return Err(DatasetError::ZeroSample);
    }
    if n > corpus.len() {
        return Err(DatasetError::SampleTooLarge {
            requested: n,
            available: corpus.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, corpus.len(), n).into_vec();
    picked.sort_unstable();
    Ok(Corpus {
        questions: picked.into_iter().map(|i| corpus.questions[i].clone()).collect(),
        source_path: corpus.source_path.clone(),
        min_answers_applied: corpus.min_answers_applied,
        filtered_out: corpus.filtered_out,
    })
}

/// Writes records in the question-file format.
pub fn write_questions(path: &Path, questions: &[QuestionRecord]) -> std::io::Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(File::create(path)?);
    for q in questions {
        serde_json::to_writer(&mut w, q)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file_with(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    fn rec(id: &str, n: usize) -> String {
        let answers: Vec<String> = (0..n).map(|i| format!("\"ans{i}\"")).collect();
        format!(
            r#"{{"id": "{id}", "question": "q {id}?", "answers": [{}], "dataset": "triviaqa"}}"#,
            answers.join(", ")
        )
    }

    #[test]
    fn filters_by_answer_count_in_order() {
        let f = file_with(&[&rec("a", 5), &rec("b", 2), &rec("c", 3)]);
        let corpus = ingest_dataset(f.path(), 3).unwrap();
        let ids: Vec<_> = corpus.iter().map(|q| q.id.as_str()).collect();
        assert_eq!(ids, ["a", "c"]);
        assert_eq!(corpus.filtered_out, 1);
        assert_eq!(corpus.min_answers_applied, 3);
    }

    #[test]
    fn min_answers_one_keeps_everything() {
        let f = file_with(&[&rec("a", 5), &rec("b", 1), &rec("c", 3)]);
        assert_eq!(ingest_dataset(f.path(), 1).unwrap().len(), 3);
    }

    #[test]
    fn default_floor_is_three() {
        assert_eq!(DEFAULT_MIN_ANSWERS, 3);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = file_with(&[&rec("a", 3), "", "{not json", &rec("c", 3)]);
        match ingest_dataset(f.path(), 1) {
            Err(DatasetError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_question_is_malformed() {
        let f = file_with(&[r#"{"id":"x","question":"   ","answers":["a"],"dataset":"d"}"#]);
        assert!(matches!(
            ingest_dataset(f.path(), 1),
            Err(DatasetError::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let f = file_with(&[&rec("a", 3), &rec("a", 4)]);
        assert!(matches!(
            ingest_dataset(f.path(), 1),
            Err(DatasetError::DuplicateId { line: 2, .. })
        ));
    }

    #[test]
    fn over_filtering_is_a_distinct_error() {
        let f = file_with(&[&rec("a", 1), &rec("b", 2)]);
        assert!(matches!(
            ingest_dataset(f.path(), 3),
            Err(DatasetError::NoSurvivors { filtered: 2, .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            ingest_dataset(Path::new("/nonexistent/q.jsonl"), 3),
            Err(DatasetError::Io { .. })
        ));
    }

    #[test]
    fn case_and_space_duplicates_collapse() {
        let f = file_with(&[
            r#"{"id":"x","question":"q?","answers":["Paris"," paris ","PARIS","Lutetia","City of Light"],"dataset":"d"}"#,
        ]);
        let corpus = ingest_dataset(f.path(), 3).unwrap();
        assert_eq!(corpus.questions[0].gold_answers, ["Paris", "Lutetia", "City of Light"]);

        let f = file_with(&[r#"{"id":"x","question":"q?","answers":["a","A","b"],"dataset":"d"}"#]);
        assert!(ingest_dataset(f.path(), 3).is_err());
    }

    #[test]
    fn sampling_is_seeded_and_distinct() {
        let lines: Vec<String> = (0..50).map(|i| rec(&format!("q{i}"), 3)).collect();
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let f = file_with(&refs);
        let corpus = ingest_dataset(f.path(), 3).unwrap();

        let a = sample_corpus(&corpus, 10, 7).unwrap();
        let b = sample_corpus(&corpus, 10, 7).unwrap();
        assert_eq!(a, b);
        let ids: HashSet<_> = a.iter().map(|q| q.id.clone()).collect();
        assert_eq!(ids.len(), 10);

        let all = sample_corpus(&corpus, 50, 3).unwrap();
        assert_eq!(all.questions, corpus.questions);

        assert!(matches!(
            sample_corpus(&corpus, 51, 0),
            Err(DatasetError::SampleTooLarge { .. })
        ));
    }

    #[test]
    fn refilter_is_idempotent() {
        let f = file_with(&[&rec("a", 5), &rec("b", 2), &rec("c", 3), &rec("d", 4)]);
        let corpus = ingest_dataset(f.path(), 3).unwrap();
        assert_eq!(corpus.refilter(3), corpus);
        assert_eq!(corpus.refilter(4).len(), 2);
    }
}
