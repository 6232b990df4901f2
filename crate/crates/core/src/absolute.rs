//! Absolute positioning against an anchor dataset.
//!
//! Each anchor pairs a prompt with reference answers written from liberal,
//! conservative and Marxist viewpoints. The respondent answers the prompt,
//! its answer is compared with each reference, and the three similarities
//! are normalized into barycentric (ternary) coordinates.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::drift::{cosine_distance, EmbeddingArchive};
use crate::provider::{ChatMessage, Gateway, ModelRef, ProviderError};
use crate::stats::{mean_std, ordered_sum};
use crate::templates::{self, Template, ANCHOR_PERSONA, JUDGE_REPROMPT, JUDGE_SIMILARITY};
use crate::verdict::{check_range, parse_verdict, AgreementVerdict, VerdictError};

/// Similarities below this are raised to it before normalizing.
pub const SIMILARITY_FLOOR: f64 = 1e-6;
/// Allowed deviation of a triple's component sum from 1.
pub const TRIPLE_TOLERANCE: f64 = 1e-9;
/// Fewer anchors than this gives an unreliable average.
pub const RECOMMENDED_MIN_ANCHORS: usize = 10;
pub const RESPONDENT_TEMPERATURE: f64 = 0.0;
/// Hex characters of the prompt digest used as an anchor id.
pub const ANCHOR_ID_LEN: usize = 16;

pub const TEMPLATES: &[Template] = &[ANCHOR_PERSONA, JUDGE_SIMILARITY, JUDGE_REPROMPT];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ideology {
    Liberal,
    Conservative,
    Marxist,
}

impl Ideology {
    /// Canonical order, also the order of triple components.
    pub const ALL: [Ideology; 3] = [Ideology::Liberal, Ideology::Conservative, Ideology::Marxist];

    pub fn as_str(self) -> &'static str {
        match self {
            Ideology::Liberal => "liberal",
            Ideology::Conservative => "conservative",
            Ideology::Marxist => "marxist",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Ideology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AbsoluteError {
    #[error("anchors line {line}{}: {message}", .id.as_ref().map(|i| format!(" (record {i})")).unwrap_or_default())]
    Format {
        line: usize,
        id: Option<String>,
        message: String,
    },
    #[error("anchors line {line}: duplicate id {id}")]
    DuplicateId { line: usize, id: String },
    #[error("invalid anchor: {0}")]
    InvalidAnchor(String),
    #[error("no anchors given")]
    NoAnchors,
    #[error("no token of {0:?} is in the embedding vocabulary")]
    Oov(String),
    #[error("text is empty")]
    EmptyText,
    #[error("mean embedding of {0:?} is the zero vector")]
    ZeroVector(String),
    #[error("judge {judge}: {source}")]
    Judge {
        judge: String,
        #[source]
        source: ProviderError,
    },
    #[error("judge {judge}: no usable verdict after reprompt: {source}")]
    ScoreParse {
        judge: String,
        #[source]
        source: VerdictError,
    },
    #[error("respondent on anchor {anchor}: {source}")]
    Respondent {
        anchor: String,
        #[source]
        source: ProviderError,
    },
    #[error("generating {ideology} answer: {source}")]
    Synthesis {
        ideology: Ideology,
        #[source]
        source: ProviderError,
    },
    #[error("{failed} of {total} prompts failed; first failure: {first}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: Box<AbsoluteError>,
    },
    #[error("invalid ideology triple: {0}")]
    InvalidTriple(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AbsoluteError {
    /// The innermost error, looking through `TooManyFailures`.
    pub fn root(&self) -> &AbsoluteError {
        match self {
            AbsoluteError::TooManyFailures { first, .. } => first.root(),
            other => other,
        }
    }

    pub fn is_provider_failure(&self) -> bool {
        matches!(
            self.root(),
            AbsoluteError::Judge { .. }
                | AbsoluteError::Respondent { .. }
                | AbsoluteError::Synthesis { .. }
        )
    }

    pub fn is_parse_failure(&self) -> bool {
        matches!(
            self.root(),
            AbsoluteError::ScoreParse { .. }
                | AbsoluteError::Oov(_)
                | AbsoluteError::ZeroVector(_)
                | AbsoluteError::EmptyText
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorAnswers {
    pub liberal: String,
    pub conservative: String,
    pub marxist: String,
}

impl AnchorAnswers {
    pub fn get(&self, ideology: Ideology) -> &str {
        match ideology {
            Ideology::Liberal => &self.liberal,
            Ideology::Conservative => &self.conservative,
            Ideology::Marxist => &self.marxist,
        }
    }

    fn from_array([liberal, conservative, marxist]: [String; 3]) -> Self {
        Self {
            liberal,
            conservative,
            marxist,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorItem {
    pub id: String,
    pub prompt: String,
    pub answers: AnchorAnswers,
}

/// Content-derived anchor id: a prefix of the SHA-256 of the prompt.
pub fn anchor_id(prompt: &str) -> String {
    Digest::of_bytes(prompt.as_bytes())
        .short(ANCHOR_ID_LEN)
        .to_string()
}

impl AnchorItem {
    /// Builds an anchor whose id is derived from the prompt.
    pub fn new(prompt: impl Into<String>, answers: AnchorAnswers) -> Result<Self, AbsoluteError> {
        let prompt = prompt.into();
        let item = Self {
            id: anchor_id(&prompt),
            prompt,
            answers,
        };
        item.validate().map_err(AbsoluteError::InvalidAnchor)?;
        Ok(item)
    }

    fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("id is empty".into());
        }
        if self.prompt.trim().is_empty() {
            return Err("prompt is empty".into());
        }
        for ideology in Ideology::ALL {
            if self.answers.get(ideology).trim().is_empty() {
                return Err(format!("{ideology} answer is empty"));
            }
        }
        Ok(())
    }
}

/// Parses a JSON Lines anchor dataset. Blank lines are skipped.
pub fn parse_anchors(text: &str) -> Result<Vec<AnchorItem>, AbsoluteError> {
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let format_err =
            |id: Option<String>, message: String| AbsoluteError::Format { line, id, message };
        let value: serde_json::Value =
            serde_json::from_str(raw).map_err(|e| format_err(None, e.to_string()))?;
        let id = value.get("id").and_then(|v| v.as_str()).map(str::to_string);
        let item: AnchorItem =
            serde_json::from_value(value).map_err(|e| format_err(id.clone(), e.to_string()))?;
        item.validate().map_err(|m| format_err(id, m))?;
        if !seen.insert(item.id.clone()) {
            return Err(AbsoluteError::DuplicateId { line, id: item.id });
        }
        items.push(item);
    }
    Ok(items)
}

pub fn load_anchors(path: &Path) -> Result<Vec<AnchorItem>, AbsoluteError> {
    parse_anchors(&std::fs::read_to_string(path)?)
}

/// One compact JSON object per line, LF-terminated.
pub fn anchors_to_jsonl(items: &[AnchorItem]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("anchor serializes"));
        out.push('\n');
    }
    out
}

pub fn save_anchors(path: &Path, items: &[AnchorItem]) -> Result<(), AbsoluteError> {
    std::fs::write(path, anchors_to_jsonl(items))?;
    Ok(())
}

/// Asks `generator` for each ideology's answer, in the order liberal,
/// conservative, marxist.
pub async fn synthesize_anchor_answers(
    gateway: &Gateway,
    generator: &ModelRef,
    prompt: &str,
) -> Result<AnchorItem, AbsoluteError> {
    if prompt.trim().is_empty() {
        return Err(AbsoluteError::EmptyText);
    }
    let mut answers: [String; 3] = Default::default();
    for ideology in Ideology::ALL {
        let persona = ANCHOR_PERSONA.render(&[("ideology", ideology.as_str())]);
        let history = [ChatMessage::user(format!("{persona}\n\n{prompt}"))];
        let reply = gateway
            .complete_chat(generator, &history)
            .await
            .map_err(|source| AbsoluteError::Synthesis { ideology, source })?;
        answers[ideology.index()] = reply.content;
    }
    AnchorItem::new(prompt, AnchorAnswers::from_array(answers))
}

/// Synthesizes one anchor per prompt, sequentially and in order.
pub async fn synthesize_anchors(
    gateway: &Gateway,
    generator: &ModelRef,
    prompts: &[String],
) -> Result<Vec<AnchorItem>, AbsoluteError> {
    if prompts.is_empty() {
        return Err(AbsoluteError::NoAnchors);
    }
    let mut items: Vec<AnchorItem> = Vec::with_capacity(prompts.len());
    for (i, prompt) in prompts.iter().enumerate() {
        let item = synthesize_anchor_answers(gateway, generator, prompt).await?;
        if items.iter().any(|x| x.id == item.id) {
            return Err(AbsoluteError::DuplicateId {
                line: i + 1,
                id: item.id,
            });
        }
        items.push(item);
    }
    Ok(items)
}

/// Barycentric coordinates over (liberal, conservative, marxist).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TripleRepr")]
pub struct IdeologyTriple {
    liberal: f64,
    conservative: f64,
    marxist: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TripleRepr {
    liberal: f64,
    conservative: f64,
    marxist: f64,
}

impl TryFrom<TripleRepr> for IdeologyTriple {
    type Error = AbsoluteError;

    fn try_from(r: TripleRepr) -> Result<Self, Self::Error> {
        Self::from_components([r.liberal, r.conservative, r.marxist])
    }
}

impl IdeologyTriple {
    /// Accepts components that are already a valid point of the simplex.
    pub fn from_components(c: [f64; 3]) -> Result<Self, AbsoluteError> {
        if c.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(AbsoluteError::InvalidTriple(format!(
                "{c:?} has a negative or non-finite component"
            )));
        }
        let sum = ordered_sum(&c);
        if (sum - 1.0).abs() > TRIPLE_TOLERANCE {
            return Err(AbsoluteError::InvalidTriple(format!("{c:?} sums to {sum}")));
        }
        Ok(Self {
            liberal: c[0],
            conservative: c[1],
            marxist: c[2],
        })
    }

    /// Divides nonnegative weights by their sum.
    pub fn normalize(w: [f64; 3]) -> Result<Self, AbsoluteError> {
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(AbsoluteError::InvalidTriple(format!(
                "{w:?} has a negative or non-finite weight"
            )));
        }
        let sum = ordered_sum(&w);
        if sum <= 0.0 {
            return Err(AbsoluteError::InvalidTriple("weights sum to zero".into()));
        }
        Self::from_components(w.map(|v| v / sum))
    }

    pub fn components(&self) -> [f64; 3] {
        [self.liberal, self.conservative, self.marxist]
    }

    pub fn get(&self, ideology: Ideology) -> f64 {
        self.components()[ideology.index()]
    }

    pub fn liberal(&self) -> f64 {
        self.liberal
    }

    pub fn conservative(&self) -> f64 {
        self.conservative
    }

    pub fn marxist(&self) -> f64 {
        self.marxist
    }

    /// The ideology with the largest component, if it is unique.
    pub fn argmax(&self) -> Option<Ideology> {
        let c = self.components();
        let best = Ideology::ALL
            .into_iter()
            .max_by(|a, b| c[a.index()].total_cmp(&c[b.index()]))?;
        let ties = c.iter().filter(|v| **v == c[best.index()]).count();
        (ties == 1).then_some(best)
    }
}

/// How two texts are compared.
#[derive(Debug, Clone)]
pub enum SimilarityBackend {
    /// Cosine of mean token embeddings, mapped to `[0, 1]`.
    EmbeddingCosine { archive: Arc<EmbeddingArchive> },
    /// A judge model rates agreement from 0 to 100.
    Judge { model: ModelRef },
}

impl SimilarityBackend {
    pub fn kind(&self) -> &'static str {
        match self {
            SimilarityBackend::EmbeddingCosine { .. } => "embedding_cosine",
            SimilarityBackend::Judge { .. } => "judge",
        }
    }
}

/// Whitespace- and punctuation-delimited words of `text`.
pub fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| c.is_whitespace() || c.is_ascii_punctuation())
        .filter(|w| !w.is_empty())
}

/// Mean of the rows of every in-vocabulary word. A word is looked up as
/// written, then lowercased.
pub fn mean_embedding(archive: &EmbeddingArchive, text: &str) -> Result<Vec<f64>, AbsoluteError> {
    let mut acc = vec![0.0f64; archive.dim()];
    let mut n = 0usize;
    for w in words(text) {
        let row = archive.row(w).or_else(|| archive.row(&w.to_lowercase()));
        if let Some(row) = row {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += f64::from(v);
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(AbsoluteError::Oov(excerpt(text)));
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    Ok(acc)
}

fn excerpt(text: &str) -> String {
    const MAX: usize = 60;
    match text.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}...", &text[..i]),
        None => text.to_string(),
    }
}

/// Similarity of `a` to `b` in `[0, 1]`.
pub async fn text_similarity(
    gateway: &Gateway,
    a: &str,
    b: &str,
    backend: &SimilarityBackend,
) -> Result<f64, AbsoluteError> {
    if a.trim().is_empty() || b.trim().is_empty() {
        return Err(AbsoluteError::EmptyText);
    }
    match backend {
        SimilarityBackend::EmbeddingCosine { archive } => embedding_similarity(archive, a, b),
        SimilarityBackend::Judge { model } => judge_similarity(gateway, model, a, b).await,
    }
}

pub fn embedding_similarity(
    archive: &EmbeddingArchive,
    a: &str,
    b: &str,
) -> Result<f64, AbsoluteError> {
    let va = mean_embedding(archive, a)?;
    let vb = mean_embedding(archive, b)?;
    let zero = |t: &str| AbsoluteError::ZeroVector(excerpt(t));
    let dist = cosine_distance(&va, &vb).ok_or_else(|| {
        if va.iter().all(|x| *x == 0.0) {
            zero(a)
        } else {
            zero(b)
        }
    })?;
    let cos = 1.0 - dist;
    Ok(((cos + 1.0) / 2.0).clamp(0.0, 1.0))
}

fn agreement(reply: &str) -> Result<f64, VerdictError> {
    let v: AgreementVerdict = parse_verdict(reply)?;
    check_range("agreement", v.agreement, 0.0, 100.0).map(|a| a / 100.0)
}

async fn judge_similarity(
    gateway: &Gateway,
    judge: &ModelRef,
    a: &str,
    b: &str,
) -> Result<f64, AbsoluteError> {
    let provider_err = |source| AbsoluteError::Judge {
        judge: judge.label(),
        source,
    };
    let mut history = vec![ChatMessage::user(
        JUDGE_SIMILARITY.render(&[("a", a), ("b", b)]),
    )];
    let first = gateway
        .complete_chat(judge, &history)
        .await
        .map_err(provider_err)?;
    match agreement(&first.content) {
        Ok(s) => return Ok(s),
        Err(e) => tracing::warn!(judge = %judge.label(), error = %e, "reprompting judge"),
    }
    history.push(first);
    history.push(ChatMessage::user(JUDGE_REPROMPT.render(&[])));
    let second = gateway
        .complete_chat(judge, &history)
        .await
        .map_err(provider_err)?;
    agreement(&second.content).map_err(|source| AbsoluteError::ScoreParse {
        judge: judge.label(),
        source,
    })
}

/// Floors each similarity at [`SIMILARITY_FLOOR`] and normalizes.
pub fn normalize_similarities(s: [f64; 3]) -> Result<IdeologyTriple, AbsoluteError> {
    IdeologyTriple::normalize(s.map(|v| v.max(SIMILARITY_FLOOR)))
}

/// Raw similarities of one respondent answer to each anchor answer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarities {
    pub liberal: f64,
    pub conservative: f64,
    pub marxist: f64,
}

impl Similarities {
    pub fn as_array(&self) -> [f64; 3] {
        [self.liberal, self.conservative, self.marxist]
    }
}

pub async fn similarities_for_prompt(
    gateway: &Gateway,
    answer: &str,
    anchor: &AnchorItem,
    backend: &SimilarityBackend,
) -> Result<Similarities, AbsoluteError> {
    let mut s = [0.0; 3];
    for ideology in Ideology::ALL {
        s[ideology.index()] =
            text_similarity(gateway, answer, anchor.answers.get(ideology), backend).await?;
    }
    Ok(Similarities {
        liberal: s[0],
        conservative: s[1],
        marxist: s[2],
    })
}

pub async fn position_for_prompt(
    gateway: &Gateway,
    answer: &str,
    anchor: &AnchorItem,
    backend: &SimilarityBackend,
) -> Result<IdeologyTriple, AbsoluteError> {
    let s = similarities_for_prompt(gateway, answer, anchor, backend).await?;
    normalize_similarities(s.as_array())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPosition {
    pub anchor_id: String,
    pub answer: String,
    pub similarities: Similarities,
    pub position: IdeologyTriple,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptFailure {
    pub anchor_id: String,
    pub error: String,
}

/// Per-component population standard deviation across prompts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dispersion {
    pub liberal: f64,
    pub conservative: f64,
    pub marxist: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsoluteOutcome {
    pub aggregate: IdeologyTriple,
    pub dispersion: Dispersion,
    /// In anchor order.
    pub per_prompt: Vec<PromptPosition>,
    pub failures: Vec<PromptFailure>,
}

#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct AbsoluteFailure {
    #[source]
    pub error: AbsoluteError,
    pub per_prompt: Vec<PromptPosition>,
    pub failures: Vec<PromptFailure>,
}

impl From<AbsoluteError> for AbsoluteFailure {
    fn from(error: AbsoluteError) -> Self {
        Self {
            error,
            per_prompt: Vec::new(),
            failures: Vec::new(),
        }
    }
}

/// Component-wise mean (renormalized) and standard deviation.
pub fn aggregate_positions(
    positions: &[IdeologyTriple],
) -> Result<(IdeologyTriple, Dispersion), AbsoluteError> {
    if positions.is_empty() {
        return Err(AbsoluteError::NoAnchors);
    }
    let mut means = [0.0; 3];
    let mut sds = [0.0; 3];
    for ideology in Ideology::ALL {
        let i = ideology.index();
        let column: Vec<f64> = positions.iter().map(|p| p.components()[i]).collect();
        let (m, s) = mean_std(&column).expect("non-empty");
        means[i] = m;
        sds[i] = s;
    }
    Ok((
        IdeologyTriple::normalize(means)?,
        Dispersion {
            liberal: sds[0],
            conservative: sds[1],
            marxist: sds[2],
        },
    ))
}

async fn evaluate_one(
    gateway: &Gateway,
    respondent: &ModelRef,
    anchor: &AnchorItem,
    backend: &SimilarityBackend,
) -> Result<PromptPosition, AbsoluteError> {
    let reply = gateway
        .complete_chat(respondent, &[ChatMessage::user(anchor.prompt.clone())])
        .await
        .map_err(|source| AbsoluteError::Respondent {
            anchor: anchor.id.clone(),
            source,
        })?;
    let similarities = similarities_for_prompt(gateway, &reply.content, anchor, backend).await?;
    Ok(PromptPosition {
        anchor_id: anchor.id.clone(),
        answer: reply.content,
        position: normalize_similarities(similarities.as_array())?,
        similarities,
    })
}

/// Asks the respondent every anchor prompt (up to `concurrency` at once)
/// and averages the per-prompt positions.
///
/// Individual prompt failures are recorded; the run fails only when more
/// than half of the prompts fail.
pub async fn evaluate_absolute(
    gateway: &Gateway,
    respondent: &ModelRef,
    anchors: &[AnchorItem],
    backend: &SimilarityBackend,
    concurrency: usize,
) -> Result<AbsoluteOutcome, AbsoluteFailure> {
    if anchors.is_empty() {
        return Err(AbsoluteError::NoAnchors.into());
    }
    let results: Vec<Result<PromptPosition, AbsoluteError>> = stream::iter(anchors)
        .map(|a| evaluate_one(gateway, respondent, a, backend))
        .buffered(concurrency.max(1))
        .collect()
        .await;

    let mut per_prompt = Vec::new();
    let mut failures = Vec::new();
    let mut first_error = None;
    for (anchor, result) in anchors.iter().zip(results) {
        match result {
            Ok(p) => per_prompt.push(p),
            Err(e) => {
                tracing::warn!(anchor = %anchor.id, error = %e, "prompt failed");
                failures.push(PromptFailure {
                    anchor_id: anchor.id.clone(),
                    error: e.to_string(),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    if failures.len() * 2 > anchors.len() {
        return Err(AbsoluteFailure {
            error: AbsoluteError::TooManyFailures {
                failed: failures.len(),
                total: anchors.len(),
                first: Box::new(first_error.expect("at least one failure")),
            },
            per_prompt,
            failures,
        });
    }
    let positions: Vec<IdeologyTriple> = per_prompt.iter().map(|p| p.position).collect();
    let (aggregate, dispersion) = aggregate_positions(&positions).map_err(AbsoluteFailure::from)?;
    Ok(AbsoluteOutcome {
        aggregate,
        dispersion,
        per_prompt,
        failures,
    })
}

pub fn template_versions() -> BTreeMap<String, u32> {
    templates::versions(TEMPLATES)
}
