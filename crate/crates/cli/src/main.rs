//! `qframe` command-line tool.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qframe::eval::Policy;
use qframe::model::{Resolution, TierCounts};

#[derive(Debug, Parser)]
#[command(name = "qframe", version, about = "Query-aware frame selection for video question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Select and write query-relevant frames at mixed resolutions.
    Select(SelectArgs),
    /// Embed a video's candidate frames into a QFEB file.
    Embed(EmbedArgs),
    /// Run the sampler conformance suite and budget checks.
    Validate(ValidateArgs),
    /// Compare selection policies on synthetic planted-relevance data.
    Bench(BenchArgs),
    /// Describe a video, QFEB file or manifest.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SelectionFlags {
    /// Uniformly spaced candidate frames to score.
    #[arg(long)]
    pub candidates: Option<usize>,
    /// Frames per tier as K,M,N (high, mid, low).
    #[arg(long, value_name = "K,M,N")]
    pub tiers: Option<TierCounts>,
    /// Token budget in high-resolution frame equivalents.
    #[arg(long)]
    pub budget: Option<String>,
    /// Softmax temperature.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Plain top-k instead of a Gumbel draw.
    #[arg(long)]
    pub deterministic: bool,
    /// High-tier frame size; defaults to the video's own size.
    #[arg(long, value_name = "WxH")]
    pub base_resolution: Option<Resolution>,
}

#[derive(Debug, Clone, Args)]
pub struct ProviderFlags {
    /// Embedding service base URL.
    #[arg(long, env = "QFRAME_ENDPOINT")]
    pub endpoint: Option<String>,
    /// Embedding cache directory [env: QFRAME_CACHE_DIR, default ~/.cache/qframe].
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Do not read or write the embedding cache.
    #[arg(long)]
    pub no_cache: bool,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub video: PathBuf,
    #[arg(long)]
    pub query: String,
    #[command(flatten)]
    pub selection: SelectionFlags,
    #[command(flatten)]
    pub provider: ProviderFlags,
    /// Precomputed candidate embeddings (QFEB).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Precomputed query embedding (QFEB with one row).
    #[arg(long)]
    pub query_embedding: Option<PathBuf>,
    /// Output directory for frames and manifest.json.
    #[arg(long, default_value = "qframe-out")]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub video: PathBuf,
    #[arg(long)]
    pub candidates: Option<usize>,
    #[command(flatten)]
    pub provider: ProviderFlags,
    /// Destination QFEB file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Draws per distribution.
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Extra distribution to check, comma separated.
    #[arg(long, value_delimiter = ',', requires = "k")]
    pub pi: Option<Vec<f64>>,
    /// Tuple length for --pi.
    #[arg(long, requires = "pi")]
    pub k: Option<usize>,
    /// Write the JSON report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, hide = true)]
    pub broken_sampler: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Policy to run; repeat for several. Defaults to all.
    #[arg(long)]
    pub policy: Vec<Policy>,
    #[arg(long)]
    pub candidates: Option<usize>,
    #[arg(long, value_name = "K,M,N")]
    pub tiers: Option<TierCounts>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Mean score lift of planted frames.
    #[arg(long)]
    pub gap: Option<f64>,
    /// Standard deviation of score noise.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Length of the planted relevant segment.
    #[arg(long)]
    pub planted: Option<usize>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env("QFRAME_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging();
    let result = match &cli.command {
        Command::Select(a) => commands::select(a),
        Command::Embed(a) => commands::embed(a),
        Command::Validate(a) => commands::validate(a),
        Command::Bench(a) => commands::bench(a),
        Command::Inspect(a) => commands::inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
