//! Command-line front end. [`dispatch`] is the whole program; `main` only
//! forwards `argv` and the exit code.
//!
//! Exit codes: 0 success, 1 domain error (`error[<Name>]: …` on stderr),
//! 2 usage error, 130 when a run is interrupted.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use tokio_util::sync::CancellationToken;

use crate::config::AppConfig;
use crate::error::{Error, Result};
use crate::generation::ProviderConfig;
use crate::metrics::{score_files, ScoreTarget};
use crate::model::RawSample;
use crate::pipeline::{self, Clients, ExportFormat, PipelineConfig, Stats, Store};
use crate::records::{self, ExportStage};
use crate::review::{ReviewQueue, TokenTable};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INTERRUPTED: i32 = 130;

#[derive(Debug, Parser)]
#[command(
    name = "cot-curate",
    version,
    about = "Build and curate chain-of-thought datasets for scene-text recognition"
)]
pub struct Cli {
    /// Configuration file (TOML, `${VAR}` interpolated).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Store root holding one directory per run (overrides `store`).
    #[arg(long, global = true, value_name = "DIR")]
    pub store: Option<PathBuf>,
    /// Run identifier (overrides `run_id`).
    #[arg(long, global = true, value_name = "ID")]
    pub run_id: Option<String>,
    /// Log progress to stderr; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a raw corpus and record its samples in the run.
    Ingest(IngestArgs),
    /// Generate, evaluate and rewrite until every sample is in D2 or quarantine.
    Run(RunArgs),
    /// Write one stage of the run as a dataset file.
    Export(ExportArgs),
    /// Evaluate a single rationale and print the verdict.
    EvalOne(EvalOneArgs),
    /// Score predictions against an exported dataset (BLEU-1..4, accuracy).
    Score(ScoreArgs),
    /// Serve the expert review API (and UI, if configured).
    ReviewServe(ReviewServeArgs),
    /// Stage counts, histograms and language breakdown of a run.
    Stats(StatsArgs),
    /// Check a dataset file record by record.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Raw corpus, one {id, image_ref, answer} object per line.
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,
    /// Only validate; do not record anything.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Raw corpus to ingest first; omit to resume the samples already recorded.
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Concurrent samples in flight.
    #[arg(long, value_name = "N")]
    pub workers: Option<usize>,
    /// Rewrite attempts before quarantine.
    #[arg(long, value_name = "N")]
    pub max_rewrites: Option<u32>,
    /// Provider endpoint (`mock:`, `mock:<script.json>`, `https://…`).
    #[arg(long, value_name = "URL")]
    pub endpoint: Option<url::Url>,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// d1, d2, d3 or quarantined.
    #[arg(long, value_name = "STAGE")]
    pub stage: ExportStage,
    #[arg(long, value_enum, default_value_t = ExportFormat::Jsonl)]
    pub format: ExportFormat,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalOneArgs {
    /// Recognized text the rationale must support.
    #[arg(long)]
    pub answer: String,
    /// Rationale text.
    #[arg(long, conflicts_with = "file", required_unless_present = "file")]
    pub text: Option<String>,
    /// File holding the rationale text.
    #[arg(long, value_name = "FILE")]
    pub file: Option<PathBuf>,
    /// Override the length bound.
    #[arg(long, value_name = "N")]
    pub l_max: Option<usize>,
    /// Evaluator config file (overrides the main config's evaluator).
    #[arg(long, value_name = "FILE")]
    pub eval_config: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Predictions, one {id, prediction} object per line.
    #[arg(long, value_name = "FILE")]
    pub pred: PathBuf,
    /// Reference dataset file.
    #[arg(long = "ref", value_name = "FILE")]
    pub reference: PathBuf,
    #[arg(long, value_enum, default_value_t = ScoreTarget::Answer)]
    pub target: ScoreTarget,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ReviewServeArgs {
    /// Listen address (default 127.0.0.1:8080).
    #[arg(long, value_name = "ADDR")]
    pub bind: Option<SocketAddr>,
    /// Directory with the reviewer UI's static files.
    #[arg(long, value_name = "DIR")]
    pub ui_dir: Option<PathBuf>,
    /// Lease length in seconds.
    #[arg(long, value_name = "SECS")]
    pub lease_secs: Option<u64>,
    /// Environment variable with `reviewer:token` pairs.
    #[arg(long, value_name = "VAR")]
    pub tokens_env: Option<String>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    #[arg(long)]
    pub json: bool,
}

/// Parses `argv` (including the program name) and runs the command,
/// writing results to stdout and diagnostics to stderr.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    // Unlocked handles: log output from runtime threads shares stderr.
    dispatch_to(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

pub fn dispatch_to<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    init_logging(cli.verbose);
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| execute(&cli, out, err)));
    match result {
        Ok(Ok(code)) => code,
        Ok(Err(e)) => {
            let _ = writeln!(err, "error[{}]: {e}", e.name());
            EXIT_DOMAIN
        }
        Err(_) => {
            let _ = writeln!(err, "error[Internal]: unexpected failure");
            EXIT_DOMAIN
        }
    }
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_env("COT_CURATE_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .try_init();
}

struct Context {
    file: AppConfig,
    pipeline: PipelineConfig,
}

fn context(cli: &Cli) -> Result<Context> {
    let file = match &cli.config {
        Some(p) => AppConfig::load(p)?,
        None => AppConfig::default(),
    };
    let mut pipeline = file.pipeline_config()?;
    if let Some(s) = &cli.store {
        pipeline.store_path = s.clone();
    }
    if let Some(r) = &cli.run_id {
        pipeline.run_id = r.clone();
    }
    Ok(Context { file, pipeline })
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Config(format!("cannot start async runtime: {e}")))
}

fn print_json<T: serde::Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    writeln!(out, "{text}").map_err(|e| Error::StoreUnavailable(format!("stdout: {e}")))
}

fn print(out: &mut dyn Write, text: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{text}").map_err(|e| Error::StoreUnavailable(format!("stdout: {e}")))
}

fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let ctx = context(cli)?;
    match &cli.command {
        Command::Ingest(a) => ingest(&ctx, a, out),
        Command::Run(a) => run(ctx, a, out),
        Command::Export(a) => {
            let store = Store::open_existing(&ctx.pipeline.store_path, &ctx.pipeline.run_id)?;
            let n = pipeline::export(&store, a.stage, a.format, &a.out)?;
            print(
                out,
                format!("exported {n} {} records to {}", a.stage, a.out.display()),
            )?;
            Ok(EXIT_OK)
        }
        Command::EvalOne(a) => eval_one(&ctx, a, out),
        Command::Score(a) => {
            let report = score_files(&a.pred, &a.reference, a.target)?;
            if a.json {
                print_json(out, &report)?;
            } else {
                print(out, &report)?;
            }
            Ok(EXIT_OK)
        }
        Command::ReviewServe(a) => review_serve(&ctx, a, out),
        Command::Stats(a) => {
            let store = Store::open_existing(&ctx.pipeline.store_path, &ctx.pipeline.run_id)?;
            let stats = store.with_state(|st| Stats::from_state(store.run_id(), st));
            if a.json {
                print_json(out, &stats)?;
            } else {
                print(out, &stats)?;
            }
            Ok(EXIT_OK)
        }
        Command::Validate(a) => validate(a, out, err),
    }
}

fn ingest(ctx: &Context, a: &IngestArgs, out: &mut dyn Write) -> Result<i32> {
    let samples = records::ingest(&a.corpus)?;
    if a.dry_run {
        print(out, format!("{} samples valid", samples.len()))?;
        return Ok(EXIT_OK);
    }
    let store = Store::open(&ctx.pipeline.store_path, &ctx.pipeline.run_id)?;
    let added = record_samples(&store, &samples)?;
    store.sync()?;
    print(
        out,
        format!(
            "ingested {} samples ({added} new) into run {}",
            samples.len(),
            store.run_id()
        ),
    )?;
    Ok(EXIT_OK)
}

fn record_samples(store: &Store, samples: &[RawSample]) -> Result<usize> {
    let mut added = 0;
    for s in samples {
        match store.sample(&s.id) {
            Some(existing) if existing.raw == *s => {}
            Some(_) => return Err(Error::DuplicateId(s.id.clone())),
            None => {
                store.append(pipeline::PipelineEvent::Ingested { sample: s.clone() })?;
                added += 1;
            }
        }
    }
    Ok(added)
}

fn run(mut ctx: Context, a: &RunArgs, out: &mut dyn Write) -> Result<i32> {
    if let Some(w) = a.workers {
        ctx.pipeline.workers = w;
    }
    if let Some(m) = a.max_rewrites {
        ctx.pipeline.max_rewrites = m;
    }
    if let Some(e) = &a.endpoint {
        ctx.pipeline.provider = ProviderConfig {
            endpoint: e.clone(),
            ..ctx.pipeline.provider.clone()
        };
    }
    ctx.pipeline.validate()?;
    let samples = match &a.corpus {
        Some(p) => records::ingest(p)?,
        None => Vec::new(),
    };
    let cfg = ctx.pipeline;
    let clients = Clients::from_config(&cfg)?;
    let rt = runtime()?;
    let cancel = CancellationToken::new();
    let report = rt.block_on(async {
        let watcher = cancel.clone();
        tokio::spawn(async move {
            if tokio::signal::ctrl_c().await.is_ok() {
                watcher.cancel();
                tracing::warn!("interrupt received; finishing in-flight calls");
            }
        });
        pipeline::run_stage12_with(&samples, &cfg, &clients, &cancel).await
    })?;
    if a.json {
        print_json(out, &report)?;
    } else {
        print(out, &report)?;
    }
    Ok(if report.counts.in_flight > 0 {
        EXIT_INTERRUPTED
    } else {
        EXIT_OK
    })
}

fn eval_one(ctx: &Context, a: &EvalOneArgs, out: &mut dyn Write) -> Result<i32> {
    let mut eval = match &a.eval_config {
        Some(p) => crate::evaluation::EvalConfig::load(p)?,
        None => ctx.pipeline.eval.clone(),
    };
    if let Some(l) = a.l_max {
        eval.l_max = l;
    }
    eval.validate()?;
    let text = match (&a.text, &a.file) {
        (Some(t), _) => t.clone(),
        (None, Some(p)) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        (None, None) => unreachable!("clap requires one of --text/--file"),
    };
    let sample = RawSample::new("eval-one", "", a.answer.as_str())?;
    let verdict = eval.evaluate_text(&text, &sample);
    if a.json {
        print_json(out, &verdict)?;
    } else {
        let names: Vec<&str> = verdict.violations.iter().map(|v| v.name()).collect();
        print(
            out,
            format!(
                "{} tokens={} l_max={} violations=[{}]",
                if verdict.passed { "PASS" } else { "FAIL" },
                verdict.token_count,
                eval.l_max,
                names.join(", ")
            ),
        )?;
    }
    Ok(EXIT_OK)
}

fn review_serve(ctx: &Context, a: &ReviewServeArgs, out: &mut dyn Write) -> Result<i32> {
    let tokens_env = a.tokens_env.as_deref().unwrap_or(ctx.file.tokens_env());
    let tokens = TokenTable::from_env(tokens_env).map_err(Error::Config)?;
    let store = Arc::new(Store::open_existing(
        &ctx.pipeline.store_path,
        &ctx.pipeline.run_id,
    )?);
    let lease = a
        .lease_secs
        .map(std::time::Duration::from_secs)
        .unwrap_or(ctx.file.lease());
    let queue =
        Arc::new(ReviewQueue::new(store, ctx.pipeline.eval.clone(), tokens).with_lease(lease));
    let bind = a
        .bind
        .or(ctx.file.review.bind)
        .unwrap_or_else(|| SocketAddr::from(([127, 0, 0, 1], 8080)));
    let ui_dir = a.ui_dir.clone().or_else(|| ctx.file.review.ui_dir.clone());
    if let Some(dir) = &ui_dir {
        if !dir.is_dir() {
            return Err(Error::Config(format!(
                "ui_dir {} is not a directory",
                dir.display()
            )));
        }
    }
    let p = queue.progress();
    print(
        out,
        format!(
            "serving {} items on http://{bind} (open={} d3={})",
            p.total(),
            p.open,
            p.d3
        ),
    )?;
    let _ = out.flush();
    runtime()?
        .block_on(crate::review::http::serve(bind, queue, ui_dir))
        .map_err(|e| Error::StoreUnavailable(format!("review service: {e}")))?;
    Ok(EXIT_OK)
}

fn validate(a: &ValidateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let report = records::validate_dataset(&a.dataset)?;
    if a.json {
        print_json(out, &report)?;
    } else {
        let stages: Vec<String> = report
            .by_stage
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        print(
            out,
            format!("{} records [{}]", report.records, stages.join(", ")),
        )?;
    }
    for p in &report.problems {
        let _ = writeln!(
            err,
            "{}:{}: {}: {}",
            display(&a.dataset),
            p.line,
            p.name,
            p.message
        );
    }
    if report.problems.is_empty() {
        Ok(EXIT_OK)
    } else {
        Err(Error::ValidationFailed {
            path: display(&a.dataset),
            count: report.problems.len(),
        })
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
