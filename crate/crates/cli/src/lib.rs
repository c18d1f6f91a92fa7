//! Command-line orchestration of the projection translation pipeline.

pub mod bench;
pub mod config;
pub mod error;
pub mod pipeline;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "projtrans", version, about = "MR to X-ray projection translation workbench")]
pub struct Cli {
    /// Run configuration file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Global seed override.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Dotted-path override, e.g. `--set trainer.epochs=10`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Synthesize the phantom cohort.
    Phantom,
    /// Forward-project MR and CT volumes.
    Project,
    /// Pair and normalize projections into a dataset.
    Prepare,
    /// Train the generator.
    Train,
    /// Generate test-set projections from the trained checkpoint.
    Infer,
    /// Compute masked metrics and per-angle reports.
    Eval,
    /// Measure inference and projector throughput.
    Bench,
    /// Run the desk-scale preset end to end.
    Demo,
    /// Print the effective configuration.
    ShowConfig,
}

impl Cli {
    pub fn run_config(&self) -> Result<RunConfig, CliError> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        match (&self.config, self.command) {
            (Some(path), _) => RunConfig::load(path, &overrides),
            (None, Command::Demo) => RunConfig::demo(&overrides),
            (None, _) => RunConfig::from_toml("", &overrides),
        }
    }
}

/// Executes one command and returns a short human-readable result line.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot configure {n} threads: {e}")))?;
    }
    let cfg = cli.run_config()?;
    let done = |what: &str, p: PathBuf| Ok(format!("{what}: {}", p.display()));
    match cli.command {
        Command::Phantom => done("phantoms", pipeline::cmd_phantom(&cfg)?),
        Command::Project => done("projections", pipeline::cmd_project(&cfg)?),
        Command::Prepare => done("dataset", pipeline::cmd_prepare(&cfg)?),
        Command::Train => done("training", pipeline::cmd_train(&cfg)?),
        Command::Infer => done("generated", pipeline::cmd_infer(&cfg)?),
        Command::Eval => done("evaluation", pipeline::cmd_eval(&cfg)?),
        Command::Bench => {
            let (path, r) = bench::cmd_bench(&cfg)?;
            Ok(format!(
                "fps_infer={:.3} views_per_s_projector={:.3} threads={} ({})",
                r.fps_infer,
                r.views_per_s_projector,
                r.threads,
                path.display()
            ))
        }
        Command::Demo => done("demo", pipeline::run_all(&cfg)?),
        Command::ShowConfig => Ok(cfg.to_toml()),
    }
}
