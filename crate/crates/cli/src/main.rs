mod args;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::error::ErrorKind;
use clap::Parser;
use serde_json::json;

use polprobe_core::absolute::{
    self, load_anchors, synthesize_anchors, SimilarityBackend, RECOMMENDED_MIN_ANCHORS,
};
use polprobe_core::drift::{parse_pairs, Metric};
use polprobe_core::provider::{
    Gateway, GatewayConfig, HttpOptions, ModelRef, ModelSpec, ScriptBook,
};
use polprobe_core::relative::{InterviewConfig, INTERVIEW_TEMPERATURE, SCORER_TEMPERATURE};
use polprobe_core::report;
use polprobe_core::store::{write_atomic, RunStore};
use polprobe_core::workflow::{
    self, embedding_backend, render_run, DriftQuery, ErrorClass, ReportFormat, WorkflowError,
};

use args::{
    AbsoluteArgs, Cli, Command, DriftArgs, EvalCommand, FormatArg, MetricArg, RelativeArgs,
    ReportArgs, SimilarityKind, SynthesizeArgs,
};

type CmdResult = Result<(), WorkflowError>;

/// Providers plus the config used to resolve `cfg:` references.
struct Providers {
    gateway: Gateway,
    config: Option<GatewayConfig>,
    scripted: bool,
}

impl Providers {
    fn build(cli: &Cli, cache_dir: Option<PathBuf>) -> Result<Self, WorkflowError> {
        let config = cli.config.as_deref().map(GatewayConfig::load).transpose()?;
        if let Some(script) = &cli.provider_script {
            let book = Arc::new(ScriptBook::load(script)?);
            let mut gateway = Gateway::new();
            for id in book.provider_ids() {
                gateway.register(id, book.clone());
            }
            return Ok(Self {
                gateway,
                config,
                scripted: true,
            });
        }
        let config = config.ok_or_else(|| {
            WorkflowError::config("no providers: pass --config <file> or --provider-script <file>")
        })?;
        let opts = HttpOptions {
            timeout: Duration::from_secs(cli.timeout),
            cache_dir: if cli.no_cache { None } else { cache_dir },
            ..HttpOptions::default()
        };
        Ok(Self {
            gateway: config.build_gateway(&opts)?,
            config: Some(config),
            scripted: false,
        })
    }

    fn model(&self, spec: &str) -> Result<ModelRef, WorkflowError> {
        let spec: ModelSpec = spec.parse()?;
        Ok(spec.resolve(&self.gateway, self.config.as_ref())?)
    }

    fn model_at(&self, spec: &str, temperature: f64) -> Result<ModelRef, WorkflowError> {
        Ok(self.model(spec)?.with_temperature(temperature)?)
    }

    /// Scripts are consumed in call order, so scripted runs use one lane.
    fn concurrency(&self, requested: u32) -> usize {
        if self.scripted {
            1
        } else {
            requested as usize
        }
    }
}

fn print_summary(value: serde_json::Value) {
    println!("{value}");
}

fn write_file(path: &Path, contents: &str) -> Result<(), WorkflowError> {
    write_atomic(path, contents.as_bytes())?;
    Ok(())
}

async fn eval_relative(cli: &Cli, a: &RelativeArgs) -> CmdResult {
    let providers = Providers::build(cli, Some(a.out.join(".cache")))?;
    let mut interview = InterviewConfig::new(
        providers.model_at(&a.chief, INTERVIEW_TEMPERATURE)?,
        providers.model_at(&a.respondent, INTERVIEW_TEMPERATURE)?,
    )
    .with_rounds(a.rounds);
    if let Some(topic) = &a.topic {
        interview = interview.with_topic_seed(topic);
    }
    let panel = a
        .panel
        .iter()
        .map(|s| providers.model_at(s, SCORER_TEMPERATURE))
        .collect::<Result<Vec<_>, _>>()?;

    let store = RunStore::new(&a.out);
    let run = workflow::run_relative(
        &providers.gateway,
        &store,
        &interview,
        &panel,
        providers.concurrency(cli.concurrency),
    )
    .await?;
    let compass = run
        .results
        .compass
        .as_ref()
        .expect("complete run has a compass");
    let mut summary = json!({
        "run_id": run.manifest.run_id,
        "kind": "relative",
        "status": run.manifest.status,
        "econ_mean": compass.econ_mean,
        "social_mean": compass.social_mean,
        "econ_stddev": compass.econ_stddev,
        "social_stddev": compass.social_stddev,
        "panel": run.results.panel.iter().map(ModelRef::label).collect::<Vec<_>>(),
        "dir": run.dir,
    });
    if a.render {
        let path = run.dir.join("compass.svg");
        write_file(&path, &report::render_compass(compass))?;
        summary["svg"] = json!(path);
    }
    print_summary(summary);
    Ok(())
}

async fn eval_absolute(cli: &Cli, a: &AbsoluteArgs) -> CmdResult {
    let anchors = load_anchors(&a.anchors)
        .map_err(|e| WorkflowError::config(format!("{}: {e}", a.anchors.display())))?;
    if anchors.is_empty() {
        return Err(WorkflowError::config(format!(
            "{}: no anchors",
            a.anchors.display()
        )));
    }
    if anchors.len() < RECOMMENDED_MIN_ANCHORS {
        eprintln!(
            "warning: only {} anchors; averages over fewer than {RECOMMENDED_MIN_ANCHORS} prompts are unreliable",
            anchors.len()
        );
    }
    let providers = Providers::build(cli, Some(a.out.join(".cache")))?;
    let backend = match (a.similarity, &a.embeddings, &a.judge) {
        (SimilarityKind::Embedding, Some(path), None) => embedding_backend(path)?,
        (SimilarityKind::Judge, None, Some(judge)) => SimilarityBackend::Judge {
            model: providers.model_at(judge, 0.0)?,
        },
        (SimilarityKind::Embedding, _, _) => {
            return Err(WorkflowError::config(
                "--similarity embedding needs --embeddings and no --judge",
            ))
        }
        (SimilarityKind::Judge, _, _) => {
            return Err(WorkflowError::config(
                "--similarity judge needs --judge and no --embeddings",
            ))
        }
    };
    let respondent = providers.model_at(&a.respondent, absolute::RESPONDENT_TEMPERATURE)?;

    let store = RunStore::new(&a.out);
    let run = workflow::run_absolute(
        &providers.gateway,
        &store,
        &respondent,
        &anchors,
        &backend,
        providers.concurrency(cli.concurrency),
    )
    .await?;
    let agg = run
        .results
        .aggregate
        .expect("complete run has an aggregate");
    let mut summary = json!({
        "run_id": run.manifest.run_id,
        "kind": "absolute",
        "status": run.manifest.status,
        "liberal": agg.liberal(),
        "conservative": agg.conservative(),
        "marxist": agg.marxist(),
        "dispersion": run.results.dispersion,
        "prompts": run.results.anchor_count,
        "failed": run.results.failures.len(),
        "dir": run.dir,
    });
    if a.render {
        let points: Vec<_> = run.results.per_prompt.iter().map(|p| p.position).collect();
        let path = run.dir.join("ternary.svg");
        write_file(&path, &report::render_ternary(&agg, Some(&points)))?;
        summary["svg"] = json!(path);
    }
    print_summary(summary);
    Ok(())
}

fn drift(a: &DriftArgs) -> CmdResult {
    let metric = match a.metric {
        MetricArg::L2 => Metric::L2,
        MetricArg::Cosine => Metric::Cosine,
    };
    let query = match (a.top_k, &a.pairs) {
        (Some(k), None) => DriftQuery::TopK { k: k as usize },
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| WorkflowError::config(format!("{}: {e}", path.display())))?;
            let pairs = parse_pairs(&text)
                .map_err(|e| WorkflowError::config(format!("{}: {e}", path.display())))?;
            if pairs.is_empty() {
                return Err(WorkflowError::config(format!(
                    "{}: no pairs",
                    path.display()
                )));
            }
            DriftQuery::Pairs { pairs }
        }
        _ => {
            return Err(WorkflowError::config(
                "pass exactly one of --top-k or --pairs",
            ))
        }
    };
    let store = RunStore::new(&a.out);
    let run = workflow::run_drift(&store, &a.base, &a.trained, &query, metric)?;
    print!("{}", run.results.csv());
    let r = &run.results;
    if let workflow::DriftOutput::Pairs { report } = &r.output {
        for u in &report.unresolved {
            eprintln!(
                "warning: pair {} / {} unresolved: {}",
                u.word_a, u.word_b, u.error
            );
        }
    }
    eprintln!(
        "{}",
        json!({
            "run_id": run.manifest.run_id,
            "kind": "drift",
            "status": run.manifest.status,
            "metric": r.metric,
            "shared": r.shared_count,
            "base_only": r.base_only.len(),
            "trained_only": r.trained_only.len(),
            "dir": run.dir,
        })
    );
    Ok(())
}

fn report_cmd(a: &ReportArgs) -> CmdResult {
    let format = match a.format {
        FormatArg::Svg => ReportFormat::Svg,
        FormatArg::Json => ReportFormat::Json,
        FormatArg::Csv => ReportFormat::Csv,
    };
    let store = RunStore::new(&a.out);
    let run = store.load(&a.run)?;
    let body = render_run(&run, format)?;
    let path = a
        .output
        .clone()
        .unwrap_or_else(|| run.dir.join(format!("report.{}", format.extension())));
    write_file(&path, &body)?;
    print_summary(json!({
        "run_id": run.manifest.run_id,
        "kind": run.manifest.kind,
        "format": format.extension(),
        "path": path,
    }));
    Ok(())
}

async fn synthesize(cli: &Cli, a: &SynthesizeArgs) -> CmdResult {
    let text = std::fs::read_to_string(&a.prompts)
        .map_err(|e| WorkflowError::config(format!("{}: {e}", a.prompts.display())))?;
    let prompts: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if prompts.is_empty() {
        return Err(WorkflowError::config(format!(
            "{}: no prompts",
            a.prompts.display()
        )));
    }
    let cache = a.out.parent().map(|p| p.join(".cache"));
    let providers = Providers::build(cli, cache)?;
    let generator = providers.model(&a.generator)?;
    let anchors = synthesize_anchors(&providers.gateway, &generator, &prompts).await?;
    write_file(&a.out, &absolute::anchors_to_jsonl(&anchors))?;
    print_summary(json!({
        "path": a.out,
        "anchors": anchors.len(),
        "generator": generator.label(),
    }));
    Ok(())
}

async fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Eval(EvalCommand::Relative(a)) => eval_relative(cli, a).await,
        Command::Eval(EvalCommand::Absolute(a)) => eval_absolute(cli, a).await,
        Command::Drift(a) => drift(a),
        Command::Report(a) => report_cmd(a),
        Command::Synthesize(a) => synthesize(cli, a).await,
    }
}

fn exit_code(class: ErrorClass) -> ExitCode {
    ExitCode::from(class.exit_code() as u8)
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => exit_code(ErrorClass::Config),
            };
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .init();

    match run(&cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(id) = &e.run_id {
                eprintln!("run {id} was persisted with its partial results");
            }
            tracing::debug!(class = ?e.class, "command failed");
            exit_code(e.class)
        }
    }
}
