use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use quarry_cli::config::{LlmMode, PipelineConfig};
use quarry_cli::stages::{self, StageContext};

/// Knowledge-graph QA dataset pipeline.
#[derive(Parser)]
#[command(name = "quarry", version, about)]
struct Cli {
    /// Pipeline configuration file.
    #[arg(long, global = true, default_value = "config.toml")]
    config: PathBuf,

    /// Output directory; stages write into fixed subdirectories of it.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Override the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Continue from existing checkpoints instead of starting fresh.
    #[arg(long, global = true)]
    resume: bool,

    /// Force the deterministic mock backend regardless of config.
    #[arg(long, global = true)]
    mock_llm: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, hydrate, simplify, and degree-reduce the knowledge graph.
    Prepare,
    /// Enumerate and quota-sample graphlets from the reduced graph.
    Graphlets,
    /// Generate QA pairs for the sampled graphlets.
    Generate,
    /// Run the structural, length, and judge filters.
    Filter,
    /// Build the corpus index and collect verified evidence bundles.
    Retrieve,
    /// Rewrite accepted records into the configured target formats.
    Rephrase,
    /// Summarize funnel, shape, and rephrase outcomes.
    Stats,
    /// Run every stage in order.
    Run,
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let mut config = PipelineConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if cli.mock_llm {
        config.llm.mode = LlmMode::Mock;
    }
    std::fs::create_dir_all(&cli.out_dir)?;

    let ctx = StageContext { config, out_dir: cli.out_dir, resume: cli.resume };
    match cli.command {
        Command::Prepare => stages::cmd_prepare(&ctx),
        Command::Graphlets => stages::cmd_graphlets(&ctx),
        Command::Generate => stages::cmd_generate(&ctx),
        Command::Filter => stages::cmd_filter(&ctx),
        Command::Retrieve => stages::cmd_retrieve(&ctx),
        Command::Rephrase => stages::cmd_rephrase(&ctx),
        Command::Stats => stages::cmd_stats(&ctx),
        Command::Run => stages::cmd_run(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
