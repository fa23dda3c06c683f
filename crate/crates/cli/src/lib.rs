//! Command-line front end: argument parsing, run configuration, metric
//! reports and the verbs built on `ripnerf-core`.

pub mod ambiguity;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ripnerf_core::data::Split;
use ripnerf_core::geometry::PlatonicSolid;

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "ripnerf", version, about = "Anti-aliased radiance fields with ripmap encoding")]
pub struct Cli {
    /// Worker threads for internal parallelism (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// JSON run config; defaults apply to absent keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted-path override, e.g. `train.iterations=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Shorthand for `--set train.seed=<n>`, applied before `--set`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Eval,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Eval => Split::Eval,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a field and write checkpoints and a loss trace.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Render the cameras of a split from a checkpoint.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "eval")]
        split: SplitArg,
    },
    /// Score a checkpoint or a directory of predictions on the eval split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "pred", required_unless_present = "pred")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        pred: Option<PathBuf>,
    },
    /// Write the configured toy scene as a dataset.
    Fixtures {
        #[command(flatten)]
        common: Common,
    },
    /// Check that a solid separates Gaussian pairs the cube conflates.
    Ambiguity {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "icosahedron")]
        solid: String,
        #[arg(long, default_value_t = 256)]
        pairs: usize,
    },
}

impl Common {
    fn overrides(&self) -> Vec<String> {
        self.seed.map(|s| format!("train.seed={s}")).into_iter().chain(self.set.iter().cloned()).collect()
    }

    fn base(&self) -> Result<Option<RunConfig>, CliError> {
        self.config.as_deref().map(RunConfig::from_file).transpose()
    }

    /// Explicit config (or defaults) with overrides applied.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        self.base()?.unwrap_or_default().with_overrides(&self.overrides())
    }

    fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Train { common, resume } => commands::cmd_train(&common.resolve()?, &common.out_or("run"), resume.as_deref()),
        Command::Render { common, checkpoint, split } => {
            let (cfg, ck) = commands::checkpoint_config(&checkpoint, common.base()?, &common.overrides())?;
            commands::cmd_render(&cfg, &ck, split.into(), &common.out_or("render"))
        }
        Command::Eval { common, checkpoint, pred } => {
            let out = common.out_or("eval");
            let report = match (checkpoint, pred) {
                (Some(path), _) => {
                    let (cfg, ck) = commands::checkpoint_config(&path, common.base()?, &common.overrides())?;
                    commands::cmd_eval(&cfg, commands::EvalSource::Checkpoint(&ck), &out, commands::train_time_near(&path))?
                }
                (None, Some(dir)) => commands::cmd_eval(&common.resolve()?, commands::EvalSource::Predictions(&dir), &out, None)?,
                (None, None) => return Err(CliError::Usage("eval needs --checkpoint or --pred".into())),
            };
            print!("{}", report.table());
            Ok(())
        }
        Command::Fixtures { common } => commands::cmd_fixtures(&common.resolve()?, &common.out_or("fixtures")),
        Command::Ambiguity { common, solid, pairs } => {
            let solid: PlatonicSolid = solid.parse().map_err(|e: ripnerf_core::geometry::GeometryError| CliError::Usage(e.to_string()))?;
            commands::cmd_ambiguity(&common.resolve()?, solid, pairs, common.out.as_deref()).map(|_| ())
        }
    }
}
