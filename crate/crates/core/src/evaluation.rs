//! Scoring generated competency questions against expert ground truth.
//!
//! A generated question is valid when its best cosine similarity against any
//! ground-truth question reaches the threshold. Precision is the share of
//! valid generated questions. Several generated questions may match the same
//! ground-truth question.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{cosine, embed_texts, EmbedError, EmbeddingProvider, EmbeddingVector};
use crate::stats::{mean, sample_std, StatsError};

pub const DEFAULT_THETA: f64 = 0.6;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no generated competency questions to evaluate")]
    EmptyGeneration,
    #[error("no match records")]
    EmptyRecords,
    #[error("threshold must lie strictly between 0 and 1, got {0}")]
    InvalidTheta(f64),
    #[error("consistency needs at least 2 runs, got {0}")]
    InsufficientRuns(usize),
    #[error("{0} reports but {1} run texts")]
    MismatchedRuns(usize, usize),
    #[error("invalid ground truth: {0}")]
    InvalidGroundTruth(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthSet {
    pub task_id: String,
    pub cqs: Vec<String>,
}

impl GroundTruthSet {
    pub fn new(task_id: &str, cqs: Vec<String>) -> Result<Self, EvalError> {
        let cqs: Vec<String> = cqs.into_iter().map(|c| c.trim().to_string()).collect();
        if cqs.is_empty() {
            return Err(EvalError::InvalidGroundTruth("no questions".into()));
        }
        let mut seen = HashSet::new();
        for cq in &cqs {
            if cq.is_empty() {
                return Err(EvalError::InvalidGroundTruth("blank question".into()));
            }
            if !seen.insert(cq.as_str()) {
                return Err(EvalError::InvalidGroundTruth(format!(
                    "duplicate question `{cq}`"
                )));
            }
        }
        Ok(Self {
            task_id: task_id.into(),
            cqs,
        })
    }

    /// Parses the plain-text format: one question per line, blank lines and
    /// `#` comments ignored, and an optional `# task_id: <id>` header.
    pub fn parse_text(default_task_id: &str, text: &str) -> Result<Self, EvalError> {
        let mut task_id = default_task_id.to_string();
        let mut cqs = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(id) = comment.trim().strip_prefix("task_id:") {
                    task_id = id.trim().to_string();
                }
                continue;
            }
            if !line.is_empty() {
                cqs.push(line.to_string());
            }
        }
        Self::new(&task_id, cqs)
    }

    /// Loads `.json` files as `{"task_id": .., "cqs": [..]}`, anything else as
    /// plain text with the file stem as default task id.
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if path.extension().is_some_and(|e| e == "json") {
            let raw: Self = serde_json::from_str(&text)
                .map_err(|e| EvalError::InvalidGroundTruth(e.to_string()))?;
            return Self::new(&raw.task_id, raw.cqs);
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("task");
        Self::parse_text(stem, &text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub cq_gen: String,
    pub best_cq_gt: String,
    pub best_cosine: f64,
    pub valid: bool,
}

pub fn is_valid(best_cosine: f64, theta: f64) -> bool {
    best_cosine >= theta
}

/// Embedding provider wrapper that remembers every vector it has produced.
/// Safe to share between threads; a text is embedded at most once unless two
/// threads miss on it at the same moment, in which case both results are
/// identical and the first insert wins.
pub struct MemoEmbedder<P> {
    inner: P,
    cache: Mutex<HashMap<String, EmbeddingVector>>,
    misses: AtomicUsize,
}

impl<P: EmbeddingProvider> MemoEmbedder<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
            misses: AtomicUsize::new(0),
        }
    }

    /// Number of texts that were sent to the wrapped provider.
    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }

    pub fn cached(&self) -> usize {
        self.cache.lock().unwrap().len()
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for MemoEmbedder<P> {
    fn provider_id(&self) -> String {
        self.inner.provider_id()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let missing: Vec<String> = {
            let cache = self.cache.lock().unwrap();
            let mut seen = HashSet::new();
            texts
                .iter()
                .filter(|t| !cache.contains_key(*t) && seen.insert(t.as_str()))
                .cloned()
                .collect()
        };
        if !missing.is_empty() {
            let vectors = embed_texts(&self.inner, &missing)?;
            self.misses.fetch_add(missing.len(), Ordering::SeqCst);
            let mut cache = self.cache.lock().unwrap();
            for (text, vector) in missing.into_iter().zip(vectors) {
                cache.entry(text).or_insert(vector);
            }
        }
        let cache = self.cache.lock().unwrap();
        Ok(texts.iter().map(|t| cache[t].clone()).collect())
    }
}

fn check_theta(theta: f64) -> Result<(), EvalError> {
    if theta > 0.0 && theta < 1.0 {
        Ok(())
    } else {
        Err(EvalError::InvalidTheta(theta))
    }
}

/// Embeds each distinct string once and returns a lookup table.
fn embed_distinct<P: EmbeddingProvider + ?Sized>(
    embedder: &P,
    texts: impl IntoIterator<Item = String>,
) -> Result<HashMap<String, EmbeddingVector>, EvalError> {
    let mut seen = HashSet::new();
    let distinct: Vec<String> = texts
        .into_iter()
        .filter(|t| seen.insert(t.clone()))
        .collect();
    let vectors = embed_texts(embedder, &distinct)?;
    Ok(distinct.into_iter().zip(vectors).collect())
}

/// Finds, for every generated question, the most similar ground-truth
/// question. Ties keep the earlier ground-truth question.
pub fn match_cqs<P: EmbeddingProvider + ?Sized>(
    generated: &[String],
    ground_truth: &GroundTruthSet,
    embedder: &P,
    theta: f64,
) -> Result<Vec<MatchRecord>, EvalError> {
    if generated.is_empty() {
        return Err(EvalError::EmptyGeneration);
    }
    check_theta(theta)?;
    let vectors = embed_distinct(embedder, generated.iter().chain(&ground_truth.cqs).cloned())?;
    generated
        .iter()
        .map(|gen| {
            let gv = &vectors[gen];
            let mut best: Option<(f64, &String)> = None;
            for gt in &ground_truth.cqs {
                let score = cosine(gv, &vectors[gt])?;
                if best.is_none_or(|(b, _)| score > b) {
                    best = Some((score, gt));
                }
            }
            let (best_cosine, best_cq_gt) = best.expect("ground truth is non-empty");
            Ok(MatchRecord {
                cq_gen: gen.clone(),
                best_cq_gt: best_cq_gt.clone(),
                best_cosine,
                valid: is_valid(best_cosine, theta),
            })
        })
        .collect()
}

/// `TP / (TP + FP)` over the records.
pub fn precision(records: &[MatchRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    let tp = records.iter().filter(|r| r.valid).count();
    Ok(tp as f64 / records.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub run_id: String,
    pub records: Vec<MatchRecord>,
    pub tp: usize,
    pub fp: usize,
    pub precision: f64,
    pub theta: f64,
}

impl EvalReport {
    /// Builds a report from best matches; validity is recomputed from `theta`.
    pub fn from_records(
        run_id: &str,
        records: Vec<MatchRecord>,
        theta: f64,
    ) -> Result<Self, EvalError> {
        check_theta(theta)?;
        let records: Vec<MatchRecord> = records
            .into_iter()
            .map(|r| MatchRecord {
                valid: is_valid(r.best_cosine, theta),
                ..r
            })
            .collect();
        let precision = precision(&records)?;
        let tp = records.iter().filter(|r| r.valid).count();
        Ok(Self {
            run_id: run_id.into(),
            fp: records.len() - tp,
            tp,
            precision,
            records,
            theta,
        })
    }

    /// Re-classifies the stored best matches under another threshold.
    pub fn with_theta(&self, theta: f64) -> Result<Self, EvalError> {
        check_theta(theta)?;
        let records = self
            .records
            .iter()
            .map(|r| MatchRecord {
                valid: is_valid(r.best_cosine, theta),
                ..r.clone()
            })
            .collect();
        Self::from_records(&self.run_id, records, theta)
    }
}

/// Matches and scores one run's questions.
pub fn evaluate_run<P: EmbeddingProvider + ?Sized>(
    run_id: &str,
    generated: &[String],
    ground_truth: &GroundTruthSet,
    embedder: &P,
    theta: f64,
) -> Result<EvalReport, EvalError> {
    let records = match_cqs(generated, ground_truth, embedder, theta)?;
    EvalReport::from_records(run_id, records, theta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub setting_key: String,
    pub std_precision: f64,
    pub std_cosine: f64,
    pub mean_precision: f64,
    pub mean_pair_cosine: f64,
    pub n_runs: usize,
}

/// Spread of precision and of pairwise run-text similarity across repeated
/// runs of one setting. `runs_text[i]` is the newline-join of run `i`'s
/// questions. With exactly two runs there is a single pair and `std_cosine`
/// is 0.
pub fn consistency<P: EmbeddingProvider + ?Sized>(
    setting_key: &str,
    reports: &[EvalReport],
    runs_text: &[String],
    embedder: &P,
) -> Result<ConsistencyReport, EvalError> {
    if reports.len() < 2 {
        return Err(EvalError::InsufficientRuns(reports.len()));
    }
    if reports.len() != runs_text.len() {
        return Err(EvalError::MismatchedRuns(reports.len(), runs_text.len()));
    }
    let precisions: Vec<f64> = reports.iter().map(|r| r.precision).collect();
    let vectors = embed_texts(embedder, runs_text)?;
    let mut pair_cosines = Vec::with_capacity(vectors.len() * (vectors.len() - 1) / 2);
    for i in 0..vectors.len() {
        for j in (i + 1)..vectors.len() {
            pair_cosines.push(cosine(&vectors[i], &vectors[j])?);
        }
    }
    let std_cosine = if pair_cosines.len() < 2 {
        0.0
    } else {
        sample_std(&pair_cosines)?
    };
    Ok(ConsistencyReport {
        setting_key: setting_key.into(),
        std_precision: sample_std(&precisions)?,
        std_cosine,
        mean_precision: mean(&precisions).unwrap(),
        mean_pair_cosine: mean(&pair_cosines).unwrap(),
        n_runs: reports.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashNgramEmbedder;

    /// Embeds each known string as a fixed 2-d vector.
    struct TableEmbedder(HashMap<String, Vec<f64>>);

    impl EmbeddingProvider for TableEmbedder {
        fn provider_id(&self) -> String {
            "table".into()
        }
        fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
            texts
                .iter()
                .map(|t| EmbeddingVector::new(self.0[t].clone()))
                .collect()
        }
    }

    /// Unit vector at the angle whose cosine against (1, 0) is `c`.
    fn at_cos(c: f64) -> Vec<f64> {
        vec![c, (1.0 - c * c).sqrt()]
    }

    fn records(valid: usize, invalid: usize) -> Vec<MatchRecord> {
        (0..valid + invalid)
            .map(|i| MatchRecord {
                cq_gen: format!("q{i}"),
                best_cq_gt: "gt".into(),
                best_cosine: if i < valid { 0.9 } else { 0.1 },
                valid: i < valid,
            })
            .collect()
    }

    #[test]
    fn threshold_examples() {
        let gt = GroundTruthSet::new("hci", vec!["GT?".into()]).unwrap();
        let table = TableEmbedder(HashMap::from([
            ("GT?".to_string(), vec![1.0, 0.0]),
            ("near?".to_string(), at_cos(0.7393)),
            ("far?".to_string(), at_cos(0.3467)),
        ]));
        let recs = match_cqs(&["near?".into(), "far?".into()], &gt, &table, 0.6).unwrap();
        assert!((recs[0].best_cosine - 0.7393).abs() < 1e-12);
        assert!(recs[0].valid);
        assert!((recs[1].best_cosine - 0.3467).abs() < 1e-12);
        assert!(!recs[1].valid);
    }

    #[test]
    fn identical_question_matches_itself() {
        let gt = GroundTruthSet::new("t", vec!["What is X?".into(), "Who uses Y?".into()]).unwrap();
        let recs = match_cqs(
            &["Who uses Y?".into()],
            &gt,
            &HashNgramEmbedder::default(),
            0.6,
        )
        .unwrap();
        assert!((recs[0].best_cosine - 1.0).abs() < 1e-9);
        assert_eq!(recs[0].best_cq_gt, "Who uses Y?");
        assert!(recs[0].valid);
    }

    #[test]
    fn ties_keep_first_ground_truth() {
        let gt = GroundTruthSet::new("t", vec!["A?".into(), "B?".into()]).unwrap();
        let table = TableEmbedder(HashMap::from([
            ("A?".to_string(), vec![1.0, 1.0]),
            ("B?".to_string(), vec![2.0, 2.0]),
            ("g?".to_string(), vec![1.0, 0.0]),
        ]));
        let recs = match_cqs(&["g?".into()], &gt, &table, 0.5).unwrap();
        assert_eq!(recs[0].best_cq_gt, "A?");
    }

    #[test]
    fn precision_examples() {
        assert_eq!(precision(&records(5, 5)).unwrap(), 0.5);
        assert_eq!(precision(&records(0, 10)).unwrap(), 0.0);
        assert!(matches!(precision(&[]), Err(EvalError::EmptyRecords)));
        let report = EvalReport::from_records("r", records(3, 1), 0.6).unwrap();
        assert_eq!((report.tp, report.fp), (3, 1));
        assert_eq!(report.precision, 0.75);
    }

    #[test]
    fn argument_errors() {
        let gt = GroundTruthSet::new("t", vec!["A?".into()]).unwrap();
        let e = HashNgramEmbedder::default();
        assert!(matches!(
            match_cqs(&[], &gt, &e, 0.6),
            Err(EvalError::EmptyGeneration)
        ));
        assert!(matches!(
            match_cqs(&["A?".into()], &gt, &e, 1.0),
            Err(EvalError::InvalidTheta(_))
        ));
        assert!(matches!(
            match_cqs(&["A?".into()], &gt, &e, 0.0),
            Err(EvalError::InvalidTheta(_))
        ));
    }

    #[test]
    fn ground_truth_formats() {
        let gt =
            GroundTruthSet::parse_text("file", "# task_id: re\n\nWhat is X?\n# comment\nWhy Y?\n")
                .unwrap();
        assert_eq!(gt.task_id, "re");
        assert_eq!(gt.cqs, vec!["What is X?", "Why Y?"]);
        assert!(GroundTruthSet::parse_text("f", "A?\nA?\n").is_err());
        assert!(GroundTruthSet::parse_text("f", "\n").is_err());

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("hci.json");
        std::fs::write(&p, r#"{"task_id": "hci", "cqs": ["Q1?", "Q2?"]}"#).unwrap();
        assert_eq!(GroundTruthSet::load(&p).unwrap().cqs.len(), 2);
        let p = dir.path().join("kg_empire.txt");
        std::fs::write(&p, "Q1?\n").unwrap();
        assert_eq!(GroundTruthSet::load(&p).unwrap().task_id, "kg_empire");
    }

    #[test]
    fn consistency_examples() {
        let e = HashNgramEmbedder::default();
        let report = |p: f64| EvalReport {
            run_id: "r".into(),
            records: vec![],
            tp: 0,
            fp: 0,
            precision: p,
            theta: 0.6,
        };
        let same = vec!["What is X?\nWhy Y?".to_string(); 3];
        let c = consistency("s", &[report(0.5), report(0.5), report(0.5)], &same, &e).unwrap();
        assert_eq!(c.std_precision, 0.0);
        assert_eq!(c.std_cosine, 0.0);
        assert!((c.mean_pair_cosine - 1.0).abs() < 1e-12);

        let two = vec!["A?".to_string(), "A?".to_string()];
        let c = consistency("s", &[report(0.2), report(0.4)], &two, &e).unwrap();
        assert_eq!(c.std_cosine, 0.0);
        assert!((c.mean_pair_cosine - 1.0).abs() < 1e-9);

        let texts: Vec<String> = ["A?", "B?", "C?"].map(String::from).to_vec();
        let c = consistency("s", &[report(0.2), report(0.4), report(0.6)], &texts, &e).unwrap();
        assert!((c.std_precision - 0.2).abs() < 1e-12);
        assert_eq!(c.n_runs, 3);

        assert!(matches!(
            consistency("s", &[report(0.1)], &texts[..1], &e),
            Err(EvalError::InsufficientRuns(1))
        ));
    }

    #[test]
    fn memoization_is_transparent() {
        let gt =
            GroundTruthSet::new("t", vec!["What is X?".into(), "How is Y built?".into()]).unwrap();
        let gen: Vec<String> = vec![
            "What is X?".into(),
            "How is Y made?".into(),
            "What is X?".into(),
        ];
        let plain = evaluate_run("r", &gen, &gt, &HashNgramEmbedder::default(), 0.6).unwrap();
        let memo = MemoEmbedder::new(HashNgramEmbedder::default());
        let first = evaluate_run("r", &gen, &gt, &memo, 0.6).unwrap();
        let misses = memo.misses();
        let second = evaluate_run("r", &gen, &gt, &memo, 0.6).unwrap();
        assert_eq!(plain, first);
        assert_eq!(first, second);
        assert_eq!(misses, 3);
        assert_eq!(memo.misses(), misses);
    }
}
