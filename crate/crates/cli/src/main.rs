//! `clinrag` operator commands.
//!
//! Exit codes: 0 success, 1 internal failure, 2 bad input, 3 an embedding or
//! LLM backend could not be reached. Settings resolve as flags over
//! `CLINRAG_*` environment variables over the `--config` TOML file.

mod commands;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use clinrag::Toggles;

#[derive(Debug, Parser)]
#[command(name = "clinrag", version, about = "Dual-evidence clinical retrieval")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "CLINRAG_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse cases and guidelines, extract concepts and the knowledge graph.
    Ingest(IngestArgs),
    /// Detect communities and embed every artifact into a snapshot.
    Index(IndexArgs),
    /// Retrieve evidence for one case file.
    Query(QueryArgs),
    /// Run an evaluation protocol.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Serve the HTTP API over a snapshot.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// JSONL patient cases.
    #[arg(long)]
    cases: PathBuf,
    /// JSONL guideline documents.
    #[arg(long)]
    guidelines: PathBuf,
    /// TSV concept vocabulary.
    #[arg(long)]
    vocab: PathBuf,
    /// TSV relation trigger rules.
    #[arg(long)]
    rules: PathBuf,
    /// TSV qualifier patterns.
    #[arg(long)]
    qualifiers: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    max_unit_chars: Option<usize>,
    #[arg(long)]
    min_unit_chars: Option<usize>,
}

#[derive(Debug, Args)]
struct IndexArgs {
    /// Directory written by `ingest`.
    #[arg(long)]
    store: PathBuf,
    /// `default` for the built-in hashed embedder, or an embedding endpoint URL.
    #[arg(long)]
    embedder: Option<String>,
    /// Vector width of a remote embedder.
    #[arg(long, default_value_t = clinrag::embed::DEFAULT_DIM)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Character budget of each community summary.
    #[arg(long)]
    summary_chars: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ToggleArg {
    Both,
    Patients,
    Guidelines,
    None,
}

impl From<ToggleArg> for Toggles {
    fn from(t: ToggleArg) -> Self {
        Toggles {
            use_patients: matches!(t, ToggleArg::Both | ToggleArg::Patients),
            use_guidelines: matches!(t, ToggleArg::Both | ToggleArg::Guidelines),
        }
    }
}

#[derive(Debug, Args)]
struct QueryArgs {
    /// Snapshot directory written by `index`.
    #[arg(long, env = "CLINRAG_INDEX_DIR")]
    index: Option<PathBuf>,
    /// Labeled SOAP text file.
    #[arg(long)]
    case: PathBuf,
    #[arg(long, value_enum, default_value_t = ToggleArg::Both)]
    toggles: ToggleArg,
    /// Number of similar patients.
    #[arg(long)]
    k: Option<usize>,
    /// Number of guideline communities.
    #[arg(long)]
    k_communities: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Print the full evidence report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ClientArg {
    /// Answers with the plan of the top retrieved patient.
    CopyPlan,
    /// Answers with a digest of the prompt.
    Mock,
    /// The configured OpenAI-compatible endpoint.
    Remote,
}

#[derive(Debug, Args)]
struct EvalCommon {
    #[arg(long, env = "CLINRAG_INDEX_DIR")]
    index: Option<PathBuf>,
    /// JSONL evaluation items.
    #[arg(long)]
    items: PathBuf,
    #[arg(long, value_enum, default_value_t = ClientArg::CopyPlan)]
    client: ClientArg,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Machine-readable results file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    /// Plan generation scored with ROUGE and BLEU.
    Note {
        #[command(flatten)]
        common: EvalCommon,
        #[arg(long, value_enum, default_value_t = ToggleArg::Both)]
        toggles: ToggleArg,
        /// Run all four toggle combinations.
        #[arg(long)]
        ablation: bool,
    },
    /// Multiple-choice accuracy.
    Mcq {
        #[command(flatten)]
        common: EvalCommon,
        #[arg(long, value_enum, default_value_t = ToggleArg::Both)]
        toggles: ToggleArg,
    },
    /// Grid search over lambda.
    Sweep {
        #[command(flatten)]
        common: EvalCommon,
        #[arg(long, value_enum, default_value_t = SweepMode::Note)]
        mode: SweepMode,
        #[arg(long, value_enum, default_value_t = ToggleArg::Patients)]
        toggles: ToggleArg,
        /// Comma-separated lambdas; defaults to 0.0, 0.1, ..., 1.0.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepMode {
    Note,
    Mcq,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, env = "CLINRAG_INDEX_DIR")]
    index: Option<PathBuf>,
    /// 0 picks a free port.
    #[arg(long, env = "CLINRAG_PORT")]
    port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Answer with prompt digests instead of calling an LLM.
    #[arg(long)]
    mock_llm: bool,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| "warn,clinrag=info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
