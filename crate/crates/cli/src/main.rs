//! `multiqa`: command-line driver for the multi-answer QA pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use multiqa_core::orchestrator::{
    report_latency, sweep, Layout, Pipeline, RunConfig, RunManifest, RunOptions, RunOutcome, Stage, SweepAxis,
};
use multiqa_core::{util, Error};
use serde_json::json;
use tracing_subscriber::EnvFilter;

const EXIT_CONFIG: u8 = 1;
const EXIT_STAGE: u8 = 2;
const EXIT_PARTIAL_SWEEP: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "multiqa", version, about = "Retrieve, read and verify answer sets for multi-answer questions")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Run configuration (TOML).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Overrides `run.output_dir`.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Reuse completed stages and the LLM response cache.
    #[arg(long, global = true)]
    resume: bool,
    /// Recompute every stage even if cached artifacts match.
    #[arg(long, global = true)]
    force: bool,
    /// Match predictions with the judge model as well as exactly.
    #[arg(long, global = true)]
    judge: bool,
    /// More log output (-v info, -vv debug); RUST_LOG overrides.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Chunk the document file into the passage store.
    Ingest,
    /// Build the BM25 index.
    Index,
    /// Embed every passage (dense and fused retrieval).
    Embed,
    /// Retrieve a passage pool per question.
    Pool,
    /// Read the top-k passages and collect answer candidates.
    Read,
    /// Generate verification questions and filter candidates.
    Verify,
    /// Score the answer sets against gold.
    Evaluate,
    /// Every stage, start to finish.
    Run,
    /// Rerun the pipeline over values of one parameter.
    Sweep {
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
    /// Summarize a finished run: metrics and per-question stage latency.
    Report,
}

fn load_config(g: &Global) -> anyhow::Result<RunConfig> {
    let Some(path) = &g.config else {
        return Err(Error::Config("--config is required for this command".into()).into());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
    let mut cfg = RunConfig::from_toml_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.resolve_paths(path.parent().unwrap_or(std::path::Path::new(".")));
    if let Some(dir) = &g.output_dir {
        cfg.run.output_dir = dir.clone();
    }
    if g.judge {
        cfg.eval.judge = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn options(g: &Global) -> RunOptions {
    RunOptions {
        resume: g.resume,
        force: g.force,
    }
}

fn summary(out: &RunOutcome) -> serde_json::Value {
    let stages: serde_json::Map<String, serde_json::Value> = out
        .manifest
        .stages
        .iter()
        .map(|(s, r)| (s.to_string(), json!({ "status": r.status, "seconds": r.seconds })))
        .collect();
    json!({
        "run_id": out.manifest.run_id,
        "output_dir": out.manifest.config.run.output_dir,
        "questions": out.manifest.question_count,
        "stages": stages,
        "llm_calls": out.manifest.counters.llm_calls(),
        "macro": out.metrics.as_ref().map(|m| &m.macro_avg),
    })
}

fn print_json(value: &serde_json::Value) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run_stage(g: &Global, target: Stage) -> anyhow::Result<u8> {
    let cfg = load_config(g)?;
    let out = Pipeline::new(cfg, options(g))?.run_until(target)?;
    print_json(&summary(&out))?;
    Ok(0)
}

fn report(g: &Global) -> anyhow::Result<u8> {
    let dir = match (&g.output_dir, &g.config) {
        (Some(dir), _) => dir.clone(),
        (None, Some(_)) => load_config(g)?.run.output_dir,
        (None, None) => return Err(Error::Config("report needs --output-dir or --config".into()).into()),
    };
    let layout = Layout::new(&dir);
    let manifest: RunManifest = util::read_json(&layout.manifest())
        .with_context(|| format!("no run manifest in {}", dir.display()))?;
    let latency = report_latency(&manifest)?;
    let metrics: Option<serde_json::Value> = layout
        .metrics()
        .exists()
        .then(|| util::read_json(&layout.metrics()))
        .transpose()?;
    print_json(&json!({
        "run_id": manifest.run_id,
        "completed": manifest.completed,
        "error": manifest.error,
        "questions": manifest.question_count,
        "seconds_per_question": latency,
        "counters": manifest.counters,
        "macro": metrics.as_ref().and_then(|m| m.get("macro")),
        "arecall_at_k": metrics.as_ref().and_then(|m| m.get("arecall_at_k")),
    }))?;
    Ok(0)
}

fn run_sweep(g: &Global, axis: SweepAxis, values: &[usize]) -> anyhow::Result<u8> {
    let cfg = load_config(g)?;
    let report = sweep(&cfg, options(g), axis, values)?;
    std::fs::create_dir_all(&cfg.run.output_dir)
        .with_context(|| format!("creating {}", cfg.run.output_dir.display()))?;
    let (json_path, csv_path) = report.write(&cfg.run.output_dir)?;
    print_json(&json!({
        "rows": report.rows,
        "json": json_path,
        "csv": csv_path,
    }))?;
    Ok(if report.is_partial() { EXIT_PARTIAL_SWEEP } else { 0 })
}

fn dispatch(cli: &Cli) -> anyhow::Result<u8> {
    let g = &cli.global;
    match &cli.command {
        Command::Ingest => run_stage(g, Stage::Ingest),
        Command::Index => run_stage(g, Stage::Index),
        Command::Embed => run_stage(g, Stage::Embed),
        Command::Pool => run_stage(g, Stage::Pool),
        Command::Read => run_stage(g, Stage::Read),
        Command::Verify => run_stage(g, Stage::Verify),
        Command::Evaluate | Command::Run => run_stage(g, Stage::Evaluate),
        Command::Sweep { axis, values } => run_sweep(g, *axis, values),
        Command::Report => report(g),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => EXIT_CONFIG,
        _ => EXIT_STAGE,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    let default_level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default_level)))
        .with_writer(std::io::stderr)
        .init();

    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
