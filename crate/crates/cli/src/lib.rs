//! Config-driven pipeline behind the `kdemu` binary.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "kdemu", version, about = "Emulators for time-dependent distribution coefficients")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides paths.out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed (overrides seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Dataset CSV (overrides paths.dataset).
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Bundle directory (overrides paths.bundle).
    #[arg(long, global = true)]
    pub bundle: Option<PathBuf>,
    /// Parameter CSV for `predict` (overrides paths.params).
    #[arg(long, global = true)]
    pub params: Option<PathBuf>,
    /// Predictor series CSV for `predict` (overrides paths.gamma).
    #[arg(long, global = true)]
    pub gamma: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with its train/test split.
    Generate,
    /// Cluster the training series and write memberships and centroids.
    Cluster,
    /// Train an emulator bundle.
    Train,
    /// Predict series for a parameter file.
    Predict,
    /// Evaluate a bundle on the dataset's test split.
    Evaluate,
    /// Error table for {without, with} clustering × {forest, mlp}.
    Compare,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Cluster => "cluster",
            Command::Train => "train",
            Command::Predict => "predict",
            Command::Evaluate => "evaluate",
            Command::Compare => "compare",
        }
    }
}

impl Cli {
    /// Config file plus command-line overrides.
    pub fn effective_config(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.paths.out = out.clone();
        }
        for (flag, slot) in [
            (&self.dataset, &mut cfg.paths.dataset),
            (&self.bundle, &mut cfg.paths.bundle),
            (&self.params, &mut cfg.paths.params),
            (&self.gamma, &mut cfg.paths.gamma),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        Ok(cfg)
    }
}

/// Runs one command; the effective config goes to `echo` and the summary
/// is returned.
pub fn run(cli: &Cli, echo: &mut dyn FnMut(&str)) -> CliResult<String> {
    let cfg = cli.effective_config()?;
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::usage("--jobs must be at least 1"));
        }
        // a second call in the same process keeps the existing pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let _lock = commands::OutputLock::acquire(&cfg.paths.out)?;
    echo(&commands::echo_config(&cfg, cli.command.name())?);
    match cli.command {
        Command::Generate => commands::generate(&cfg),
        Command::Cluster => commands::cluster(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Predict => commands::predict(&cfg),
        Command::Evaluate => commands::evaluate(&cfg),
        Command::Compare => commands::compare(&cfg),
    }
}
