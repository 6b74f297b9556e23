use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use vmr_cli::commands;
use vmr_cli::config::RunConfig;
use vmr_core::data::Strictness;

#[derive(Parser)]
#[command(
    name = "vmr",
    version,
    about = "Supervision generation and evaluation toolkit for language-driven action localization"
)]
struct Cli {
    /// Run configuration file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the seed of every seeded stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Never issue network calls; serve expansions from the cache only.
    #[arg(long, global = true)]
    offline: bool,
    /// Worker threads for per-video stages (0 = one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Fail on the first invalid input line or record.
    #[arg(long, global = true, conflicts_with = "lenient")]
    strict: bool,
    /// Skip invalid input lines or records with a warning.
    #[arg(long, global = true)]
    lenient: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Expand every unique query into start/end boundary descriptions.
    Expand,
    /// Generate per-frame probability supervision for every record.
    Supervise {
        /// Also write the fused video features in the binary format.
        #[arg(long)]
        emit_fused: bool,
    },
    /// Score a predictions file against the annotations.
    Eval {
        /// Predictions JSONL (defaults to <output_dir>/predictions.jsonl).
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Write a noise-perturbed copy of the annotations.
    Perturb {
        /// Output path (defaults to <output_dir>/annotations_perturbed.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic offline dataset with planted boundaries.
    Fixture {
        #[arg(long, default_value_t = 3)]
        videos: usize,
        #[arg(long, default_value_t = 16)]
        frames: usize,
        #[arg(long, default_value_t = 8)]
        dim: usize,
    },
    /// Print the resolved configuration and toolkit version.
    Report,
}

impl Cli {
    fn strictness(&self, default: Strictness) -> Strictness {
        if self.strict {
            Strictness::Strict
        } else if self.lenient {
            Strictness::Lenient
        } else {
            default
        }
    }

    fn resolved_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.noise.seed = seed;
        }
        if self.offline {
            cfg.llm.offline = true;
        }
        if let Some(jobs) = self.jobs {
            cfg.jobs = jobs;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.resolved_config()?;
    match &cli.command {
        Command::Expand => {
            commands::expand::run(&cfg, cli.strictness(Strictness::Strict))?;
        }
        Command::Supervise { emit_fused } => {
            commands::supervise::run(&cfg, *emit_fused, cli.strictness(Strictness::Strict))?;
        }
        Command::Eval { predictions } => {
            commands::eval::run(&cfg, predictions.as_deref(), cli.strictness(Strictness::Lenient))?;
        }
        Command::Perturb { out } => {
            commands::perturb::run(&cfg, out.as_deref(), cli.strictness(Strictness::Strict))?;
        }
        Command::Fixture { videos, frames, dim } => {
            commands::fixture::run(&cfg, *videos, *frames, *dim)?;
        }
        Command::Report => {
            commands::report::run(&cfg)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
