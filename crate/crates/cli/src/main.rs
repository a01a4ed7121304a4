//! Command-line driver for the seqcox pipeline.
//!
//! Every subcommand accepts `--config <file>` followed by overrides of the
//! form `--<key> <value>` or `--<key>=<value>`, one per configuration key.
//! Log verbosity is read from `SEQCOX_LOG` (default `info`).

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use seqcox::pipeline::{Pipeline, PipelineConfig};

#[derive(Parser)]
#[command(
    name = "seqcox",
    version,
    about = "Deep sequence features for Cox models of recurrent events"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load the record table and write sequences, outcomes and a data report.
    Ingest(StageArgs),
    /// Generate a Weibull recurrent-event table.
    Simulate(StageArgs),
    /// Train the selected sequence encoders.
    Train(StageArgs),
    /// Extract deep features for every patient.
    Features(StageArgs),
    /// Fit Cox models on the deep features.
    FitCox(StageArgs),
    /// Fit the classical recurrent-event models.
    FitClassical(StageArgs),
    /// Write the metrics table.
    Evaluate(StageArgs),
    /// Write Kaplan-Meier curves for median-split risk groups.
    Km(StageArgs),
    /// LIME and gradient saliency for one encoder.
    Explain(StageArgs),
    /// t-SNE embeddings of the deep features.
    Tsne(StageArgs),
    /// Every stage in order.
    RunAll(StageArgs),
}

#[derive(Args)]
struct StageArgs {
    /// Key-value configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Configuration overrides, e.g. `--epochs 50 --models lstm,ssm`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

impl Command {
    fn split(&self) -> (&'static str, &StageArgs) {
        match self {
            Command::Ingest(a) => ("ingest", a),
            Command::Simulate(a) => ("simulate", a),
            Command::Train(a) => ("train", a),
            Command::Features(a) => ("features", a),
            Command::FitCox(a) => ("fit-cox", a),
            Command::FitClassical(a) => ("fit-classical", a),
            Command::Evaluate(a) => ("evaluate", a),
            Command::Km(a) => ("km", a),
            Command::Explain(a) => ("explain", a),
            Command::Tsne(a) => ("tsne", a),
            Command::RunAll(a) => ("run-all", a),
        }
    }
}

/// Pairs up `--key value` and `--key=value` tokens.
fn parse_overrides(tokens: &[String]) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    let mut it = tokens.iter();
    while let Some(tok) = it.next() {
        let Some(flag) = tok.strip_prefix("--") else {
            bail!("expected `--<key>`, found `{tok}`");
        };
        match flag.split_once('=') {
            Some((k, v)) => pairs.push((k.to_string(), v.to_string())),
            None => {
                let v = it.next().with_context(|| format!("missing value for `--{flag}`"))?;
                pairs.push((flag.to_string(), v.clone()));
            }
        }
    }
    Ok(pairs)
}

fn resolve(args: &StageArgs) -> Result<PipelineConfig> {
    let pairs = parse_overrides(&args.overrides)?;
    let text = match &args.config {
        Some(path) => std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        None => String::new(),
    };
    let mut all = PipelineConfig::parse_pairs(&text)?;
    all.extend(pairs);
    Ok(PipelineConfig::default().with_overrides(all.iter().map(|(k, v)| (k.as_str(), v.as_str())))?)
}

fn run(cli: Cli) -> Result<()> {
    let (stage, args) = cli.command.split();
    let cfg = resolve(args)?;
    log::debug!("resolved configuration:\n{}", cfg.to_text());
    let mut pipeline = Pipeline::new(cfg)?;
    pipeline.run(stage)?;
    log::info!("{stage} finished; artifacts in {}", pipeline.writer().dir().display());
    Ok(())
}

/// The error chain, skipping causes already spelled out by their parent.
fn message(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SEQCOX_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::FAILURE
        }
    }
}
