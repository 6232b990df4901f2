//! Embedding-space drift between a base and a fine-tuned checkpoint.
//!
//! All arithmetic accumulates in `f64` over the stored `f32` rows.

mod archive;

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use archive::{EmbeddingArchive, MAGIC};

#[derive(Debug, thiserror::Error)]
pub enum DriftError {
    #[error("archive format error: {0}")]
    Format(String),
    #[error("non-finite value in row for token {0:?}")]
    NonFinite(String),
    #[error("dimension mismatch: base has dim {base}, trained has dim {trained}")]
    DimMismatch { base: usize, trained: usize },
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("the two vocabularies share no tokens")]
    EmptyIntersection,
    #[error("zero vector for {0:?}: cosine distance undefined")]
    ZeroVector(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    L2,
    Cosine,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::L2 => "l2",
            Metric::Cosine => "cosine",
        })
    }
}

impl FromStr for Metric {
    type Err = DriftError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "l2" => Ok(Metric::L2),
            "cosine" => Ok(Metric::Cosine),
            other => Err(DriftError::InvalidArgument(format!(
                "unknown metric {other:?} (expected l2 or cosine)"
            ))),
        }
    }
}

/// Euclidean distance.
pub fn l2_distance<A: Copy + Into<f64>>(a: &[A], b: &[A]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = y.into() - x.into();
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// `1 - cos(a, b)`, in `[0, 2]`. `None` if either vector is zero.
pub fn cosine_distance<A: Copy + Into<f64>>(a: &[A], b: &[A]) -> Option<f64> {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.into(), y.into());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((1.0 - dot / (na * nb).sqrt()).clamp(0.0, 2.0))
}

/// Movement of one token between checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRecord {
    pub token: String,
    pub l2: f64,
    /// Absent when either row is the zero vector.
    pub cosine_dist: Option<f64>,
}

impl DriftRecord {
    pub fn value(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::L2 => Some(self.l2),
            Metric::Cosine => self.cosine_dist,
        }
    }
}

/// Shared vocabulary plus the tokens only one side has.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabAlignment {
    /// In base row order.
    pub shared: Vec<String>,
    pub base_only: Vec<String>,
    pub trained_only: Vec<String>,
}

fn check_dims(base: &EmbeddingArchive, trained: &EmbeddingArchive) -> Result<(), DriftError> {
    if base.dim() != trained.dim() {
        return Err(DriftError::DimMismatch {
            base: base.dim(),
            trained: trained.dim(),
        });
    }
    Ok(())
}

pub fn align_vocabs(
    base: &EmbeddingArchive,
    trained: &EmbeddingArchive,
) -> Result<VocabAlignment, DriftError> {
    check_dims(base, trained)?;
    let (shared, base_only) = base
        .tokens()
        .iter()
        .cloned()
        .partition(|t| trained.contains(t));
    let trained_only = trained
        .tokens()
        .iter()
        .filter(|t| !base.contains(t))
        .cloned()
        .collect();
    Ok(VocabAlignment {
        shared,
        base_only,
        trained_only,
    })
}

pub fn token_drift(
    base: &EmbeddingArchive,
    trained: &EmbeddingArchive,
    token: &str,
) -> Result<DriftRecord, DriftError> {
    check_dims(base, trained)?;
    let unknown = || DriftError::UnknownToken(token.to_string());
    let b = base.row(token).ok_or_else(unknown)?;
    let t = trained.row(token).ok_or_else(unknown)?;
    Ok(DriftRecord {
        token: token.to_string(),
        l2: l2_distance(b, t),
        cosine_dist: cosine_distance(b, t),
    })
}

/// Descending by metric value; ties and records lacking a cosine value
/// (which rank last) are ordered by ascending token.
fn rank(a: &DriftRecord, b: &DriftRecord, metric: Metric) -> Ordering {
    match (a.value(metric), b.value(metric)) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
    .then_with(|| a.token.cmp(&b.token))
}

/// Drift of every shared token, in base row order.
pub fn all_drift(
    base: &EmbeddingArchive,
    trained: &EmbeddingArchive,
) -> Result<Vec<DriftRecord>, DriftError> {
    let alignment = align_vocabs(base, trained)?;
    alignment
        .shared
        .par_iter()
        .map(|t| token_drift(base, trained, t))
        .collect()
}

/// The `k` most-moved shared tokens under `metric`.
pub fn top_k_drift(
    base: &EmbeddingArchive,
    trained: &EmbeddingArchive,
    k: usize,
    metric: Metric,
) -> Result<Vec<DriftRecord>, DriftError> {
    if k == 0 {
        return Err(DriftError::InvalidArgument("k must be at least 1".into()));
    }
    let mut records = all_drift(base, trained)?;
    if records.is_empty() {
        return Err(DriftError::EmptyIntersection);
    }
    records.par_sort_by(|a, b| rank(a, b, metric));
    records.truncate(k);
    Ok(records)
}

/// A word to locate in embedding space, optionally as the mean of explicit
/// subword tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub word: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtokens: Option<Vec<String>>,
}

impl Concept {
    pub fn word(word: impl Into<String>) -> Self {
        Self {
            word: word.into(),
            subtokens: None,
        }
    }

    pub fn with_subtokens<I, S>(word: impl Into<String>, subtokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            word: word.into(),
            subtokens: Some(subtokens.into_iter().map(Into::into).collect()),
        }
    }
}

impl fmt::Display for Concept {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.word)?;
        if let Some(subs) = &self.subtokens {
            write!(f, "={}", subs.join("+"))?;
        }
        Ok(())
    }
}

/// Parses `word` or `word=sub1+sub2`.
impl FromStr for Concept {
    type Err = DriftError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DriftError::InvalidArgument(format!("malformed concept {s:?}"));
        match s.split_once('=') {
            None if !s.is_empty() => Ok(Concept::word(s)),
            None => Err(bad()),
            Some((word, subs)) => {
                let subs: Vec<&str> = subs.split('+').collect();
                if word.is_empty() || subs.iter().any(|t| t.is_empty()) {
                    return Err(bad());
                }
                Ok(Concept::with_subtokens(word, subs))
            }
        }
    }
}

/// The concept's vector: the mean of its explicit subtoken rows when given,
/// otherwise the row of the exactly matching token.
pub fn concept_vector(
    archive: &EmbeddingArchive,
    concept: &Concept,
) -> Result<Vec<f64>, DriftError> {
    match &concept.subtokens {
        Some(subs) => {
            if subs.is_empty() {
                return Err(DriftError::InvalidArgument(format!(
                    "empty subtoken list for {:?}",
                    concept.word
                )));
            }
            let mut acc = vec![0.0f64; archive.dim()];
            for sub in subs {
                let row = archive
                    .row(sub)
                    .ok_or_else(|| DriftError::UnknownToken(sub.clone()))?;
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a += f64::from(v);
                }
            }
            let n = subs.len() as f64;
            acc.iter_mut().for_each(|a| *a /= n);
            Ok(acc)
        }
        None => archive
            .row(&concept.word)
            .map(|r| r.iter().map(|&v| f64::from(v)).collect())
            .ok_or_else(|| DriftError::UnknownToken(concept.word.clone())),
    }
}

pub fn pair_distance(
    archive: &EmbeddingArchive,
    a: &Concept,
    b: &Concept,
    metric: Metric,
) -> Result<f64, DriftError> {
    let va = concept_vector(archive, a)?;
    let vb = concept_vector(archive, b)?;
    match metric {
        Metric::L2 => Ok(l2_distance(&va, &vb)),
        Metric::Cosine => cosine_distance(&va, &vb)
            .ok_or_else(|| DriftError::ZeroVector(format!("{} / {}", a.word, b.word))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptPair {
    pub a: Concept,
    pub b: Concept,
}

/// Distance between two concepts in each checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDistance {
    pub word_a: String,
    pub word_b: String,
    pub base_distance: f64,
    pub trained_distance: f64,
    pub metric: Metric,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnresolvedPair {
    pub word_a: String,
    pub word_b: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDistanceReport {
    pub rows: Vec<PairDistance>,
    pub unresolved: Vec<UnresolvedPair>,
}

/// Base and trained distances for each pair. Pairs that cannot be resolved
/// in either checkpoint are listed in `unresolved` rather than dropped.
pub fn pair_distance_report(
    base: &EmbeddingArchive,
    trained: &EmbeddingArchive,
    pairs: &[ConceptPair],
    metric: Metric,
) -> Result<PairDistanceReport, DriftError> {
    if pairs.is_empty() {
        return Err(DriftError::InvalidArgument("no concept pairs given".into()));
    }
    check_dims(base, trained)?;
    let mut report = PairDistanceReport {
        rows: Vec::new(),
        unresolved: Vec::new(),
    };
    for pair in pairs {
        let distances = pair_distance(base, &pair.a, &pair.b, metric)
            .and_then(|b| pair_distance(trained, &pair.a, &pair.b, metric).map(|t| (b, t)));
        match distances {
            Ok((base_distance, trained_distance)) => report.rows.push(PairDistance {
                word_a: pair.a.word.clone(),
                word_b: pair.b.word.clone(),
                base_distance,
                trained_distance,
                metric,
            }),
            Err(e) => report.unresolved.push(UnresolvedPair {
                word_a: pair.a.word.clone(),
                word_b: pair.b.word.clone(),
                error: e.to_string(),
            }),
        }
    }
    Ok(report)
}

/// Parses a pairs file: one pair per line as two whitespace-separated
/// concepts (`word` or `word=sub1+sub2`). Blank lines and `#` comments are
/// skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<ConceptPair>, DriftError> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [a, b] = fields[..] else {
            return Err(DriftError::InvalidArgument(format!(
                "pairs line {}: expected two concepts, found {}",
                n + 1,
                fields.len()
            )));
        };
        pairs.push(ConceptPair {
            a: a.parse()?,
            b: b.parse()?,
        });
    }
    Ok(pairs)
}

/// Tokens whose rows are identical across the two archives.
pub fn unchanged_tokens(
    base: &EmbeddingArchive,
    trained: &EmbeddingArchive,
) -> Result<HashSet<String>, DriftError> {
    Ok(all_drift(base, trained)?
        .into_iter()
        .filter(|r| r.l2 == 0.0)
        .map(|r| r.token)
        .collect())
}
