//! End-to-end runs: evaluate, persist, and render.
//!
//! Each `run_*` function writes a run directory whatever the outcome. A
//! failed evaluation keeps whatever partial results it produced.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::absolute::{
    self, evaluate_absolute, AbsoluteError, AnchorItem, Dispersion, IdeologyTriple, PromptFailure,
    PromptPosition, SimilarityBackend,
};
use crate::digest::Digest;
use crate::drift::{
    align_vocabs, pair_distance_report, top_k_drift, ConceptPair, DriftError, DriftRecord,
    EmbeddingArchive, Metric, PairDistanceReport,
};
use crate::provider::{Gateway, ModelRef, ProviderError, Transcript};
use crate::relative::{
    self, canonical_panel, evaluate_relative, CompassScore, InterviewConfig, PanelScore,
    RelativeError, ScorerFailure,
};
use crate::report;
use crate::store::{
    config_digest, RunKind, RunManifest, RunStatus, RunStore, StoreError, StoredRun,
};

/// Broad failure category, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad configuration, arguments, files or formats.
    Config,
    /// A model endpoint failed or refused.
    Provider,
    /// A model replied but its output could not be used.
    Parse,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 1,
            ErrorClass::Provider => 2,
            ErrorClass::Parse => 3,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct WorkflowError {
    pub class: ErrorClass,
    pub message: String,
    /// Set when a run directory was written before the failure.
    pub run_id: Option<String>,
}

impl WorkflowError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            class: ErrorClass::Config,
            message: message.into(),
            run_id: None,
        }
    }

    fn with_run(mut self, run_id: &str) -> Self {
        self.run_id = Some(run_id.to_string());
        self
    }
}

fn provider_class(e: &ProviderError) -> ErrorClass {
    match e {
        ProviderError::Config(_) | ProviderError::InvalidRequest(_) => ErrorClass::Config,
        _ => ErrorClass::Provider,
    }
}

impl From<ProviderError> for WorkflowError {
    fn from(e: ProviderError) -> Self {
        Self {
            class: provider_class(&e),
            message: e.to_string(),
            run_id: None,
        }
    }
}

impl From<StoreError> for WorkflowError {
    fn from(e: StoreError) -> Self {
        Self::config(e.to_string())
    }
}

impl From<DriftError> for WorkflowError {
    fn from(e: DriftError) -> Self {
        Self::config(e.to_string())
    }
}

impl From<&RelativeError> for ErrorClass {
    fn from(e: &RelativeError) -> Self {
        match e {
            RelativeError::Interview { source, .. } | RelativeError::Scorer { source, .. } => {
                provider_class(source)
            }
            RelativeError::ScoreParse { .. }
            | RelativeError::InvalidScore(_)
            | RelativeError::EmptyTranscript
            | RelativeError::Transcript(_) => ErrorClass::Parse,
            RelativeError::EmptyPanel
            | RelativeError::DuplicateScorer(_)
            | RelativeError::NoRounds => ErrorClass::Config,
        }
    }
}

impl From<&AbsoluteError> for ErrorClass {
    fn from(e: &AbsoluteError) -> Self {
        match e.root() {
            AbsoluteError::Judge { source, .. }
            | AbsoluteError::Respondent { source, .. }
            | AbsoluteError::Synthesis { source, .. } => provider_class(source),
            root if root.is_parse_failure() => ErrorClass::Parse,
            _ => ErrorClass::Config,
        }
    }
}

impl From<AbsoluteError> for WorkflowError {
    fn from(e: AbsoluteError) -> Self {
        Self {
            class: ErrorClass::from(&e),
            message: e.to_string(),
            run_id: None,
        }
    }
}

/// Content of `results.json` for a relative run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeResults {
    pub interview: InterviewConfig,
    /// Canonical order.
    pub panel: Vec<ModelRef>,
    pub compass: Option<CompassScore>,
    /// Scores that did complete when `compass` is absent.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub partial_scores: Vec<PanelScore>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<ScorerFailure>,
}

#[derive(Debug, Clone)]
pub struct RunReport<T> {
    pub manifest: RunManifest,
    pub dir: PathBuf,
    pub results: T,
}

fn finish_failed(
    writer: crate::store::RunWriter,
    wrote_payload: bool,
    error: WorkflowError,
) -> Result<WorkflowError, WorkflowError> {
    let run_id = writer.run_id().to_string();
    let status = if wrote_payload {
        RunStatus::Partial
    } else {
        RunStatus::Failed
    };
    writer.finish(status, Some(error.message.clone()))?;
    Ok(error.with_run(&run_id))
}

/// Interview, panel scoring and persistence of a relative run.
pub async fn run_relative(
    gateway: &Gateway,
    store: &RunStore,
    interview: &InterviewConfig,
    panel: &[ModelRef],
    concurrency: usize,
) -> Result<RunReport<RelativeResults>, WorkflowError> {
    let panel = canonical_panel(panel).map_err(|e| WorkflowError {
        class: ErrorClass::from(&e),
        message: e.to_string(),
        run_id: None,
    })?;
    let versions = relative::template_versions();
    let digest = config_digest(&json!({
        "kind": RunKind::Relative,
        "interview": interview,
        "panel": panel,
        "template_versions": versions,
    }));
    let mut writer = store.create(RunKind::Relative, digest, versions);
    let run_id = writer.run_id().to_string();

    match evaluate_relative(gateway, interview, &panel, &run_id, concurrency).await {
        Ok(outcome) => {
            writer.write_transcript(0, &outcome.transcript)?;
            let results = RelativeResults {
                interview: interview.clone(),
                panel,
                compass: Some(outcome.compass),
                partial_scores: Vec::new(),
                failures: Vec::new(),
            };
            writer.write_results(&results)?;
            let dir = writer.dir().to_path_buf();
            let manifest = writer.finish(RunStatus::Complete, None)?;
            Ok(RunReport {
                manifest,
                dir,
                results,
            })
        }
        Err(failure) => {
            let error = WorkflowError {
                class: ErrorClass::from(&failure.error),
                message: failure.error.to_string(),
                run_id: None,
            };
            let mut wrote = false;
            if let Some(t) = &failure.partial.transcript {
                writer.write_transcript(0, t)?;
                writer.write_results(&RelativeResults {
                    interview: interview.clone(),
                    panel,
                    compass: None,
                    partial_scores: failure.partial.scores.clone(),
                    failures: failure.partial.failures.clone(),
                })?;
                wrote = true;
            }
            Err(finish_failed(writer, wrote, error)?)
        }
    }
}

/// Content of `results.json` for an absolute run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsoluteResults {
    pub respondent: ModelRef,
    pub similarity: serde_json::Value,
    pub anchor_count: usize,
    pub aggregate: Option<IdeologyTriple>,
    pub dispersion: Option<Dispersion>,
    pub per_prompt: Vec<PromptPosition>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<PromptFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptExchange {
    pub anchor_id: String,
    pub prompt: String,
    pub answer: String,
}

/// Stable description of a similarity backend, for digests and results.
pub fn describe_backend(backend: &SimilarityBackend) -> serde_json::Value {
    match backend {
        SimilarityBackend::EmbeddingCosine { archive } => json!({
            "kind": backend.kind(),
            "archive_sha256": Digest::of_bytes(&archive.to_bytes()).as_str(),
        }),
        SimilarityBackend::Judge { model } => json!({
            "kind": backend.kind(),
            "judge": model,
        }),
    }
}

fn write_exchanges(
    writer: &mut crate::store::RunWriter,
    anchors: &[AnchorItem],
    per_prompt: &[PromptPosition],
) -> Result<(), StoreError> {
    for (i, p) in per_prompt.iter().enumerate() {
        let prompt = anchors
            .iter()
            .find(|a| a.id == p.anchor_id)
            .map(|a| a.prompt.clone())
            .unwrap_or_default();
        writer.write_transcript(
            i,
            &PromptExchange {
                anchor_id: p.anchor_id.clone(),
                prompt,
                answer: p.answer.clone(),
            },
        )?;
    }
    Ok(())
}

pub async fn run_absolute(
    gateway: &Gateway,
    store: &RunStore,
    respondent: &ModelRef,
    anchors: &[AnchorItem],
    backend: &SimilarityBackend,
    concurrency: usize,
) -> Result<RunReport<AbsoluteResults>, WorkflowError> {
    if anchors.is_empty() {
        return Err(AbsoluteError::NoAnchors.into());
    }
    let versions = absolute::template_versions();
    let similarity = describe_backend(backend);
    let mut sorted: Vec<&AnchorItem> = anchors.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let digest = config_digest(&json!({
        "kind": RunKind::Absolute,
        "respondent": respondent,
        "similarity": similarity,
        "anchors": Digest::of_json(&sorted).as_str(),
        "template_versions": versions,
    }));
    let mut writer = store.create(RunKind::Absolute, digest, versions);

    match evaluate_absolute(gateway, respondent, anchors, backend, concurrency).await {
        Ok(outcome) => {
            write_exchanges(&mut writer, anchors, &outcome.per_prompt)?;
            let results = AbsoluteResults {
                respondent: respondent.clone(),
                similarity,
                anchor_count: anchors.len(),
                aggregate: Some(outcome.aggregate),
                dispersion: Some(outcome.dispersion),
                per_prompt: outcome.per_prompt,
                failures: outcome.failures,
            };
            writer.write_results(&results)?;
            let dir = writer.dir().to_path_buf();
            let manifest = writer.finish(RunStatus::Complete, None)?;
            Ok(RunReport {
                manifest,
                dir,
                results,
            })
        }
        Err(failure) => {
            let error = WorkflowError::from(failure.error);
            write_exchanges(&mut writer, anchors, &failure.per_prompt)?;
            writer.write_results(&AbsoluteResults {
                respondent: respondent.clone(),
                similarity,
                anchor_count: anchors.len(),
                aggregate: None,
                dispersion: None,
                per_prompt: failure.per_prompt,
                failures: failure.failures,
            })?;
            Err(finish_failed(writer, true, error)?)
        }
    }
}

/// What a drift run measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DriftQuery {
    TopK { k: usize },
    Pairs { pairs: Vec<ConceptPair> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DriftOutput {
    TopK { records: Vec<DriftRecord> },
    Pairs { report: PairDistanceReport },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftResults {
    pub metric: Metric,
    pub base_sha256: String,
    pub trained_sha256: String,
    pub dim: usize,
    pub shared_count: usize,
    pub base_only: Vec<String>,
    pub trained_only: Vec<String>,
    pub output: DriftOutput,
}

impl DriftResults {
    pub fn csv(&self) -> String {
        match &self.output {
            DriftOutput::TopK { records } => report::drift_csv(records),
            DriftOutput::Pairs { report } => report::pairs_csv(&report.rows),
        }
    }
}

fn read_archive(path: &Path) -> Result<(EmbeddingArchive, Vec<u8>), WorkflowError> {
    let named =
        |e: &dyn std::fmt::Display| WorkflowError::config(format!("{}: {e}", path.display()));
    let bytes = std::fs::read(path).map_err(|e| named(&e))?;
    let archive = EmbeddingArchive::from_bytes(&bytes).map_err(|e| named(&e))?;
    Ok((archive, bytes))
}

pub fn run_drift(
    store: &RunStore,
    base_path: &Path,
    trained_path: &Path,
    query: &DriftQuery,
    metric: Metric,
) -> Result<RunReport<DriftResults>, WorkflowError> {
    let (base, base_bytes) = read_archive(base_path)?;
    let (trained, trained_bytes) = read_archive(trained_path)?;
    let base_sha256 = Digest::of_bytes(&base_bytes).as_str().to_string();
    let trained_sha256 = Digest::of_bytes(&trained_bytes).as_str().to_string();

    let alignment = align_vocabs(&base, &trained)?;
    let output = match query {
        DriftQuery::TopK { k } => DriftOutput::TopK {
            records: top_k_drift(&base, &trained, *k, metric)?,
        },
        DriftQuery::Pairs { pairs } => DriftOutput::Pairs {
            report: pair_distance_report(&base, &trained, pairs, metric)?,
        },
    };

    let digest = config_digest(&json!({
        "kind": RunKind::Drift,
        "base_sha256": base_sha256,
        "trained_sha256": trained_sha256,
        "query": query,
        "metric": metric,
    }));
    let mut writer = store.create(RunKind::Drift, digest, Default::default());
    let results = DriftResults {
        metric,
        base_sha256,
        trained_sha256,
        dim: base.dim(),
        shared_count: alignment.shared.len(),
        base_only: alignment.base_only,
        trained_only: alignment.trained_only,
        output,
    };
    writer.write_results(&results)?;
    let dir = writer.dir().to_path_buf();
    let manifest = writer.finish(RunStatus::Complete, None)?;
    Ok(RunReport {
        manifest,
        dir,
        results,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Svg,
    Json,
    Csv,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Svg => "svg",
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = WorkflowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "svg" => Ok(ReportFormat::Svg),
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(WorkflowError::config(format!(
                "unknown format {other:?} (expected svg, json or csv)"
            ))),
        }
    }
}

fn decode<T: serde::de::DeserializeOwned>(run: &StoredRun) -> Result<T, WorkflowError> {
    run.results_as::<T>()?
        .ok_or_else(|| WorkflowError::config(format!("run {} has no results", run.manifest.run_id)))
}

fn panel_csv(score: &CompassScore) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    let mut rows = vec![[
        "scorer".to_string(),
        "econ".to_string(),
        "social".to_string(),
    ]];
    for p in &score.panel {
        rows.push([
            p.scorer().label(),
            report::format_sig9(p.econ_axis()),
            report::format_sig9(p.social_axis()),
        ]);
    }
    rows.push([
        "mean".to_string(),
        report::format_sig9(score.econ_mean),
        report::format_sig9(score.social_mean),
    ]);
    for r in rows {
        w.write_record(&r).expect("write to memory");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("UTF-8")
}

fn positions_csv(results: &AbsoluteResults) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    w.write_record(["anchor_id", "liberal", "conservative", "marxist"])
        .expect("write to memory");
    let mut row = |id: &str, t: &IdeologyTriple| {
        let c = t.components().map(report::format_sig9);
        w.write_record([id, &c[0], &c[1], &c[2]])
            .expect("write to memory");
    };
    for p in &results.per_prompt {
        row(&p.anchor_id, &p.position);
    }
    if let Some(agg) = &results.aggregate {
        row("aggregate", agg);
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("UTF-8")
}

/// Renders a stored run in `format`.
pub fn render_run(run: &StoredRun, format: ReportFormat) -> Result<String, WorkflowError> {
    if format == ReportFormat::Json {
        let doc = json!({ "manifest": run.manifest, "results": run.results });
        let mut s = serde_json::to_string_pretty(&doc).expect("JSON values serialize");
        s.push('\n');
        return Ok(s);
    }
    let incomplete = || {
        WorkflowError::config(format!(
            "run {} has no aggregate to render",
            run.manifest.run_id
        ))
    };
    match (run.manifest.kind, format) {
        (RunKind::Relative, _) => {
            let results: RelativeResults = decode(run)?;
            let compass = results.compass.ok_or_else(incomplete)?;
            Ok(match format {
                ReportFormat::Svg => report::render_compass(&compass),
                _ => panel_csv(&compass),
            })
        }
        (RunKind::Absolute, ReportFormat::Svg) => {
            let results: AbsoluteResults = decode(run)?;
            let agg = results.aggregate.ok_or_else(incomplete)?;
            let points: Vec<IdeologyTriple> =
                results.per_prompt.iter().map(|p| p.position).collect();
            Ok(report::render_ternary(&agg, Some(&points)))
        }
        (RunKind::Absolute, _) => Ok(positions_csv(&decode(run)?)),
        (RunKind::Drift, ReportFormat::Csv) => Ok(decode::<DriftResults>(run)?.csv()),
        (RunKind::Drift, _) => Err(WorkflowError::config(
            "drift runs have no figure; use --format csv or json",
        )),
    }
}

/// Loads the typed transcript of a relative run.
pub fn relative_transcript(run: &StoredRun) -> Result<Option<Transcript>, WorkflowError> {
    Ok(run.transcripts_as::<Transcript>()?.into_iter().next())
}

/// Builds an embedding backend from an archive file.
pub fn embedding_backend(path: &Path) -> Result<SimilarityBackend, WorkflowError> {
    let archive = EmbeddingArchive::load(path)
        .map_err(|e| WorkflowError::config(format!("{}: {e}", path.display())))?;
    Ok(SimilarityBackend::EmbeddingCosine {
        archive: Arc::new(archive),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::absolute::AnchorAnswers;
    use crate::provider::{FnProvider, ScriptedProvider};

    fn verdict(econ: f64, social: f64) -> String {
        format!("VERDICT {{\"econ\": {econ}, \"social\": {social}, \"rationale\": \"r\"}}")
    }

    fn relative_gateway() -> Gateway {
        let mut gw = Gateway::new();
        gw.register("chief", Arc::new(ScriptedProvider::new(["Q1?", "Q2?"])));
        gw.register("resp", Arc::new(ScriptedProvider::new(["A1", "A2"])));
        gw.register("s1", Arc::new(ScriptedProvider::new([verdict(-6.0, 1.0)])));
        gw.register("s2", Arc::new(ScriptedProvider::new([verdict(-2.0, 3.0)])));
        gw
    }

    fn interview() -> InterviewConfig {
        InterviewConfig::new(ModelRef::new("chief", "c"), ModelRef::new("resp", "r")).with_rounds(2)
    }

    #[tokio::test]
    async fn relative_run_persists_and_renders() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        let panel = [ModelRef::new("s2", "b"), ModelRef::new("s1", "a")];
        let run = run_relative(&relative_gateway(), &store, &interview(), &panel, 1)
            .await
            .unwrap();
        let compass = run.results.compass.clone().unwrap();
        assert_eq!((compass.econ_mean, compass.social_mean), (-4.0, 2.0));

        let loaded = store.load(&run.manifest.run_id).unwrap();
        assert_eq!(loaded.manifest.status, RunStatus::Complete);
        assert_eq!(
            relative_transcript(&loaded)
                .unwrap()
                .unwrap()
                .answer_count(),
            2
        );
        let svg = render_run(&loaded, ReportFormat::Svg).unwrap();
        assert!(roxmltree::Document::parse(&svg).is_ok());
        assert!(render_run(&loaded, ReportFormat::Csv)
            .unwrap()
            .contains("mean,-4,2"));
    }

    #[tokio::test]
    async fn relative_results_are_byte_identical_across_reruns() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        let panel = [ModelRef::new("s1", "a"), ModelRef::new("s2", "b")];
        let a = run_relative(&relative_gateway(), &store, &interview(), &panel, 1)
            .await
            .unwrap();
        let b = run_relative(&relative_gateway(), &store, &interview(), &panel, 1)
            .await
            .unwrap();
        assert_ne!(a.manifest.run_id, b.manifest.run_id);
        assert_eq!(a.manifest.config_digest, b.manifest.config_digest);
        let read = |d: &Path| std::fs::read(d.join("results.json")).unwrap();
        assert_eq!(read(&a.dir), read(&b.dir));
    }

    #[tokio::test]
    async fn failing_scorer_leaves_partial_run() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        let mut gw = relative_gateway();
        gw.register(
            "s2",
            Arc::new(ScriptedProvider::new(["garbage", "more garbage"])),
        );
        let panel = [ModelRef::new("s1", "a"), ModelRef::new("s2", "b")];
        let err = run_relative(&gw, &store, &interview(), &panel, 1)
            .await
            .unwrap_err();
        assert_eq!(err.class, ErrorClass::Parse);
        let run = store.load(err.run_id.as_deref().unwrap()).unwrap();
        assert_eq!(run.manifest.status, RunStatus::Partial);
        let results: RelativeResults = run.results_as().unwrap().unwrap();
        assert_eq!(results.partial_scores.len(), 1);
        assert_eq!(results.failures.len(), 1);
        assert!(render_run(&run, ReportFormat::Svg).is_err());
    }

    #[tokio::test]
    async fn interview_failure_is_a_failed_run() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        let mut gw = relative_gateway();
        gw.register(
            "resp",
            Arc::new(ScriptedProvider::new(Vec::<String>::new())),
        );
        let err = run_relative(&gw, &store, &interview(), &[ModelRef::new("s1", "a")], 1)
            .await
            .unwrap_err();
        assert_eq!(err.class, ErrorClass::Provider);
        let run = store.load(err.run_id.as_deref().unwrap()).unwrap();
        assert_eq!(run.manifest.status, RunStatus::Failed);
    }

    #[tokio::test]
    async fn absolute_run_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        let archive = EmbeddingArchive::from_rows(
            2,
            [
                ("left", vec![1.0, 0.0]),
                ("right", vec![0.0, 1.0]),
                ("red", vec![-1.0, 0.2]),
            ],
        )
        .unwrap();
        let backend = SimilarityBackend::EmbeddingCosine {
            archive: Arc::new(archive),
        };
        let gw = Gateway::new().with_provider(
            "resp",
            Arc::new(FnProvider::new(|_, _| Ok("red red".into()))),
        );
        let anchors: Vec<AnchorItem> = (0..3)
            .map(|i| {
                AnchorItem::new(
                    format!("q{i}"),
                    AnchorAnswers {
                        liberal: "left".into(),
                        conservative: "right".into(),
                        marxist: "red".into(),
                    },
                )
                .unwrap()
            })
            .collect();
        let run = run_absolute(
            &gw,
            &store,
            &ModelRef::new("resp", "r"),
            &anchors,
            &backend,
            2,
        )
        .await
        .unwrap();
        let loaded = store.load(&run.manifest.run_id).unwrap();
        let results: AbsoluteResults = loaded.results_as().unwrap().unwrap();
        assert_eq!(results, run.results);
        assert_eq!(loaded.transcripts.len(), 3);
        assert_eq!(
            results.aggregate.unwrap().argmax(),
            Some(crate::absolute::Ideology::Marxist)
        );
        assert!(render_run(&loaded, ReportFormat::Svg)
            .unwrap()
            .contains("id=\"aggregate\""));
    }

    #[test]
    fn drift_run_persists_csv_source() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path().join("runs"));
        let base = EmbeddingArchive::from_rows(
            2,
            [
                ("a", vec![1.0, 0.0]),
                ("b", vec![0.0, 1.0]),
                ("c", vec![1.0, 1.0]),
            ],
        )
        .unwrap();
        let trained = EmbeddingArchive::from_rows(
            2,
            [
                ("a", vec![1.0, 0.0]),
                ("b", vec![3.0, 1.0]),
                ("d", vec![1.0, 1.0]),
            ],
        )
        .unwrap();
        let (bp, tp) = (dir.path().join("b.emb"), dir.path().join("t.emb"));
        base.save(&bp).unwrap();
        trained.save(&tp).unwrap();
        let run = run_drift(&store, &bp, &tp, &DriftQuery::TopK { k: 1 }, Metric::L2).unwrap();
        assert_eq!(run.results.base_only, vec!["c"]);
        assert_eq!(run.results.trained_only, vec!["d"]);
        assert_eq!(
            run.results.csv(),
            "token,l2,cosine_dist\r\nb,3,0.683772234\r\n"
        );
        let loaded = store.load(&run.manifest.run_id).unwrap();
        assert_eq!(
            render_run(&loaded, ReportFormat::Csv).unwrap(),
            run.results.csv()
        );
        assert!(render_run(&loaded, ReportFormat::Svg).is_err());

        let small = EmbeddingArchive::from_rows(1, [("a", vec![1.0])]).unwrap();
        let sp = dir.path().join("s.emb");
        small.save(&sp).unwrap();
        let err = run_drift(&store, &bp, &sp, &DriftQuery::TopK { k: 1 }, Metric::L2).unwrap_err();
        assert_eq!(err.class, ErrorClass::Config);
        assert!(err.message.contains("dimension mismatch"));
    }
}
