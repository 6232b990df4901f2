//! Relative positioning: a chief evaluator interviews the respondent, then a
//! panel of scorer models rates the whole transcript on a two-axis compass.
//!
//! Axes run from -10 to +10. `econ` is negative for the economic left,
//! `social` is negative for libertarian/progressive and positive for
//! authoritarian/conservative positions.

use std::collections::BTreeMap;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use crate::provider::{
    ChatMessage, Gateway, ModelRef, ProviderError, Role, Transcript, TranscriptError,
};
use crate::stats::mean_std;
use crate::templates::{self, Template, CHIEF_PROMPT, SCORER_REPROMPT, SCORER_RUBRIC};
use crate::verdict::{check_range, parse_verdict, CompassVerdict, VerdictError};

pub const CHIEF: &str = "chief";
pub const RESPONDENT: &str = "respondent";
pub const DEFAULT_ROUNDS: u32 = 8;
pub const AXIS_LIMIT: f64 = 10.0;

/// Default sampling temperature for interview participants.
pub const INTERVIEW_TEMPERATURE: f64 = 0.7;
/// Default sampling temperature for panel scorers.
pub const SCORER_TEMPERATURE: f64 = 0.0;

pub const TEMPLATES: &[Template] = &[CHIEF_PROMPT, SCORER_RUBRIC, SCORER_REPROMPT];

#[derive(Debug, thiserror::Error)]
pub enum RelativeError {
    #[error("round {round}: {participant}: {source}")]
    Interview {
        round: u32,
        participant: &'static str,
        #[source]
        source: ProviderError,
    },
    #[error("scorer {scorer}: {source}")]
    Scorer {
        scorer: String,
        #[source]
        source: ProviderError,
    },
    #[error("scorer {scorer}: no usable verdict after reprompt: {source}")]
    ScoreParse {
        scorer: String,
        #[source]
        source: VerdictError,
    },
    #[error("invalid panel score: {0}")]
    InvalidScore(String),
    #[error("panel is empty")]
    EmptyPanel,
    #[error("panel lists {0} more than once")]
    DuplicateScorer(String),
    #[error("transcript has no respondent answers")]
    EmptyTranscript,
    #[error("interview needs at least one round")]
    NoRounds,
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
}

impl RelativeError {
    pub fn is_parse_failure(&self) -> bool {
        matches!(self, RelativeError::ScoreParse { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterviewConfig {
    pub chief: ModelRef,
    pub respondent: ModelRef,
    pub rounds: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_seed: Option<String>,
}

impl InterviewConfig {
    pub fn new(chief: ModelRef, respondent: ModelRef) -> Self {
        Self {
            chief,
            respondent,
            rounds: DEFAULT_ROUNDS,
            topic_seed: None,
        }
    }

    pub fn with_rounds(mut self, rounds: u32) -> Self {
        self.rounds = rounds;
        self
    }

    pub fn with_topic_seed(mut self, seed: impl Into<String>) -> Self {
        self.topic_seed = Some(seed.into());
        self
    }

    fn kickoff(&self) -> String {
        match &self.topic_seed {
            Some(seed) => {
                format!("Begin the interview now. Open with a question related to: {seed}")
            }
            None => "Begin the interview now. Ask your first question.".to_string(),
        }
    }
}

/// One scorer's rating of a transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PanelScoreRepr")]
pub struct PanelScore {
    scorer: ModelRef,
    econ_axis: f64,
    social_axis: f64,
    rationale: String,
}

#[derive(Deserialize)]
struct PanelScoreRepr {
    scorer: ModelRef,
    econ_axis: f64,
    social_axis: f64,
    rationale: String,
}

impl TryFrom<PanelScoreRepr> for PanelScore {
    type Error = RelativeError;

    fn try_from(r: PanelScoreRepr) -> Result<Self, Self::Error> {
        PanelScore::new(r.scorer, r.econ_axis, r.social_axis, r.rationale)
    }
}

impl PanelScore {
    pub fn new(
        scorer: ModelRef,
        econ_axis: f64,
        social_axis: f64,
        rationale: impl Into<String>,
    ) -> Result<Self, RelativeError> {
        let rationale = rationale.into();
        check_range("econ", econ_axis, -AXIS_LIMIT, AXIS_LIMIT)
            .and_then(|_| check_range("social", social_axis, -AXIS_LIMIT, AXIS_LIMIT))
            .map_err(|e| RelativeError::InvalidScore(e.to_string()))?;
        if rationale.trim().is_empty() {
            return Err(RelativeError::InvalidScore("rationale is empty".into()));
        }
        Ok(Self {
            scorer,
            econ_axis,
            social_axis,
            rationale,
        })
    }

    pub fn scorer(&self) -> &ModelRef {
        &self.scorer
    }

    pub fn econ_axis(&self) -> f64 {
        self.econ_axis
    }

    pub fn social_axis(&self) -> f64 {
        self.social_axis
    }

    pub fn rationale(&self) -> &str {
        &self.rationale
    }
}

/// Panel aggregate: per-axis mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompassScore {
    pub econ_mean: f64,
    pub social_mean: f64,
    pub econ_stddev: f64,
    pub social_stddev: f64,
    pub panel: Vec<PanelScore>,
}

/// Conducts `cfg.rounds` question/answer exchanges.
///
/// The chief sees the whole conversation so far (its questions as its own
/// turns, the answers as user turns) before each new question. The
/// respondent never sees the chief's instructions.
pub async fn run_interview(
    gateway: &Gateway,
    cfg: &InterviewConfig,
    run_id: &str,
) -> Result<Transcript, RelativeError> {
    if cfg.rounds == 0 {
        return Err(RelativeError::NoRounds);
    }
    let participants = BTreeMap::from([
        (CHIEF.to_string(), cfg.chief.clone()),
        (RESPONDENT.to_string(), cfg.respondent.clone()),
    ]);
    let mut transcript = Transcript::new(run_id, participants)?;
    let mut chief_view = vec![
        ChatMessage::system(CHIEF_PROMPT.render(&[])),
        ChatMessage::user(cfg.kickoff()),
    ];
    let mut respondent_view: Vec<ChatMessage> = Vec::new();

    for round in 1..=cfg.rounds {
        let question = gateway
            .complete_chat(&cfg.chief, &chief_view)
            .await
            .map_err(|source| RelativeError::Interview {
                round,
                participant: CHIEF,
                source,
            })?
            .content;
        chief_view.push(ChatMessage::assistant(question.clone()));
        respondent_view.push(ChatMessage::user(question.clone()));
        transcript.push(ChatMessage::user(question).spoken_by(CHIEF))?;

        let answer = gateway
            .complete_chat(&cfg.respondent, &respondent_view)
            .await
            .map_err(|source| RelativeError::Interview {
                round,
                participant: RESPONDENT,
                source,
            })?
            .content;
        respondent_view.push(ChatMessage::assistant(answer.clone()));
        chief_view.push(ChatMessage::user(answer.clone()));
        transcript.push(ChatMessage::assistant(answer).spoken_by(RESPONDENT))?;
    }
    Ok(transcript)
}

fn format_transcript(transcript: &Transcript) -> String {
    transcript
        .messages()
        .iter()
        .filter_map(|m| match m.role {
            Role::User => Some(format!("INTERVIEWER: {}", m.content)),
            Role::Assistant => Some(format!("RESPONDENT: {}", m.content)),
            Role::System => None,
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn verdict_to_score(scorer: &ModelRef, reply: &str) -> Result<PanelScore, VerdictError> {
    let v: CompassVerdict = parse_verdict(reply)?;
    check_range("econ", v.econ, -AXIS_LIMIT, AXIS_LIMIT)?;
    check_range("social", v.social, -AXIS_LIMIT, AXIS_LIMIT)?;
    if v.rationale.trim().is_empty() {
        return Err(VerdictError::Malformed("rationale is empty".into()));
    }
    Ok(PanelScore {
        scorer: scorer.clone(),
        econ_axis: v.econ,
        social_axis: v.social,
        rationale: v.rationale,
    })
}

/// Asks one scorer to rate the transcript. A reply without a valid verdict
/// gets one stricter reprompt before failing.
pub async fn score_transcript(
    gateway: &Gateway,
    scorer: &ModelRef,
    transcript: &Transcript,
) -> Result<PanelScore, RelativeError> {
    if transcript.answer_count() == 0 {
        return Err(RelativeError::EmptyTranscript);
    }
    let provider_err = |source| RelativeError::Scorer {
        scorer: scorer.label(),
        source,
    };
    let mut history = vec![ChatMessage::user(
        SCORER_RUBRIC.render(&[("transcript", &format_transcript(transcript))]),
    )];
    let first = gateway
        .complete_chat(scorer, &history)
        .await
        .map_err(provider_err)?;
    match verdict_to_score(scorer, &first.content) {
        Ok(score) => return Ok(score),
        Err(e) => tracing::warn!(scorer = %scorer.label(), error = %e, "reprompting scorer"),
    }
    history.push(first);
    history.push(ChatMessage::user(SCORER_REPROMPT.render(&[])));
    let second = gateway
        .complete_chat(scorer, &history)
        .await
        .map_err(provider_err)?;
    verdict_to_score(scorer, &second.content).map_err(|source| RelativeError::ScoreParse {
        scorer: scorer.label(),
        source,
    })
}

/// Per-axis means and population standard deviations. The panel is kept
/// in the given order; the statistics do not depend on it.
pub fn aggregate_panel(scores: Vec<PanelScore>) -> Result<CompassScore, RelativeError> {
    let econ: Vec<f64> = scores.iter().map(|s| s.econ_axis).collect();
    let social: Vec<f64> = scores.iter().map(|s| s.social_axis).collect();
    let (econ_mean, econ_stddev) = mean_std(&econ).ok_or(RelativeError::EmptyPanel)?;
    let (social_mean, social_stddev) = mean_std(&social).ok_or(RelativeError::EmptyPanel)?;
    Ok(CompassScore {
        econ_mean,
        social_mean,
        econ_stddev,
        social_stddev,
        panel: scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerFailure {
    pub scorer: ModelRef,
    pub error: String,
}

/// Whatever a failed evaluation managed to produce.
#[derive(Debug, Default)]
pub struct PartialRelative {
    pub transcript: Option<Transcript>,
    pub scores: Vec<PanelScore>,
    pub failures: Vec<ScorerFailure>,
}

#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct RelativeFailure {
    #[source]
    pub error: RelativeError,
    pub partial: PartialRelative,
}

impl From<RelativeError> for RelativeFailure {
    fn from(error: RelativeError) -> Self {
        Self {
            error,
            partial: PartialRelative::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RelativeOutcome {
    pub transcript: Transcript,
    pub compass: CompassScore,
}

/// Sorts the panel into canonical order, rejecting empty or repeated panels.
pub fn canonical_panel(panel: &[ModelRef]) -> Result<Vec<ModelRef>, RelativeError> {
    if panel.is_empty() {
        return Err(RelativeError::EmptyPanel);
    }
    let mut sorted = panel.to_vec();
    sorted.sort_by(ModelRef::canonical_cmp);
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(RelativeError::DuplicateScorer(w[0].label()));
    }
    Ok(sorted)
}

/// Interview, independent panel scoring (up to `concurrency` scorers at
/// once), then aggregation.
///
/// Scorers are visited in canonical order, so the result does not depend on
/// the order `panel` is given in. If any scorer fails, every other scorer
/// still runs and the failure carries all partial results.
pub async fn evaluate_relative(
    gateway: &Gateway,
    cfg: &InterviewConfig,
    panel: &[ModelRef],
    run_id: &str,
    concurrency: usize,
) -> Result<RelativeOutcome, RelativeFailure> {
    let panel = canonical_panel(panel)?;
    let transcript = run_interview(gateway, cfg, run_id).await?;

    let results: Vec<Result<PanelScore, RelativeError>> = stream::iter(panel.iter())
        .map(|scorer| score_transcript(gateway, scorer, &transcript))
        .buffered(concurrency.max(1))
        .collect()
        .await;

    let mut scores = Vec::new();
    let mut failures = Vec::new();
    let mut first_error = None;
    for (scorer, result) in panel.iter().zip(results) {
        match result {
            Ok(s) => scores.push(s),
            Err(e) => {
                failures.push(ScorerFailure {
                    scorer: scorer.clone(),
                    error: e.to_string(),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(error) = first_error {
        return Err(RelativeFailure {
            error,
            partial: PartialRelative {
                transcript: Some(transcript),
                scores,
                failures,
            },
        });
    }
    let compass = aggregate_panel(scores)?;
    Ok(RelativeOutcome {
        transcript,
        compass,
    })
}

pub fn template_versions() -> BTreeMap<String, u32> {
    templates::versions(TEMPLATES)
}
