//! `kgqa-rl`: materialize gold answers, train, evaluate, run reward ablations
//! and score single completions.
//!
//! Exit status: 0 on success, 1 on a usage or configuration error (reported
//! before any file is written), 2 on a runtime failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Environment variable that overrides the configured endpoint URL.
pub const ENDPOINT_ENV: &str = "KGQA_RL_ENDPOINT";

#[derive(Debug, Parser)]
#[command(name = "kgqa-rl", version, about = "Outcome-rewarded GRPO for Text-to-SPARQL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Execute gold queries and store their answers in the dataset files.
    Materialize(MaterializeArgs),
    /// Train the policy with GRPO as configured.
    Train(TrainArgs),
    /// Score completions (or a trained policy's greedy output) on a split.
    Evaluate(EvaluateArgs),
    /// Train and evaluate once per reward preset.
    Ablate(AblateArgs),
    /// Print the reward breakdown of one completion.
    Score(ScoreArgs),
}

#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    /// SPARQL endpoint URL.
    #[arg(long, env = ENDPOINT_ENV)]
    pub endpoint: Option<String>,
    /// N-Triples file for the embedded engine.
    #[arg(long, conflicts_with = "endpoint")]
    pub store: Option<PathBuf>,
    /// Persistent query cache file.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Delete the cache file before starting.
    #[arg(long, requires = "cache")]
    pub clear_cache: bool,
    /// Per-query timeout in seconds.
    #[arg(long)]
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Args)]
pub struct MaterializeArgs {
    /// Dataset directory (or a single split file).
    #[arg(long)]
    pub data: PathBuf,
    /// Splits to process.
    #[arg(long = "split", default_values = ["train", "valid", "test"])]
    pub splits: Vec<String>,
    /// Output directory; defaults to rewriting the input files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Continue from the latest checkpoint in the run directory.
    #[arg(long)]
    pub resume: bool,
    /// Override a config entry, e.g. `--set grpo.seed=7`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Override `grpo.max_steps`.
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OutputFormat {
    Json,
    Markdown,
    Both,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// JSON lines of `{"id": ..., "completion": ...}`.
    #[arg(long, conflicts_with = "policy", required_unless_present = "policy")]
    pub completions: Option<PathBuf>,
    /// Trained policy file; evaluated with greedy decoding.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub max_new_tokens: usize,
    /// Directory for the report files.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = OutputFormat::Both)]
    pub format: OutputFormat,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Reward presets to compare, in order; repeats get distinct seeds.
    #[arg(long = "preset", required = true)]
    pub presets: Vec<String>,
    /// Output directory for per-preset runs and reports.
    #[arg(long)]
    pub out: PathBuf,
    /// Override a config entry, e.g. `--set grpo.seed=7`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Instance id.
    #[arg(long)]
    pub id: String,
    /// Completion text; read from standard input when absent.
    #[arg(long)]
    pub completion: Option<String>,
    /// Generated token count for the length term; defaults to the query
    /// token count of the completion.
    #[arg(long)]
    pub tokens: Option<usize>,
    /// Reward preset name.
    #[arg(long, conflicts_with = "reward_config")]
    pub preset: Option<String>,
    /// Reward configuration (TOML).
    #[arg(long)]
    pub reward_config: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

/// Bad invocation or configuration: exit status 1.
#[derive(Debug)]
pub struct UsageError(pub anyhow::Error);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(e: impl Into<anyhow::Error>) -> anyhow::Error {
    anyhow::Error::new(UsageError(e.into()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Materialize(a) => commands::materialize(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Score(a) => commands::score(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
