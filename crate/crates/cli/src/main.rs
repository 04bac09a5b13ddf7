//! `pgan`: data preparation, pretraining, adversarial training, generation,
//! evaluation and reward analysis, driven by one JSON config.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{Config, Precision};

#[derive(Parser)]
#[command(name = "pgan", version, about = "Adversarial dialogue response training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON object of flat dotted keys, e.g. {"model.hidden": 64}.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Gen,
    D1,
    D2,
}

/// Which checkpoints a read-only command loads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Pretrained,
    Adversarial,
}

#[derive(Subcommand)]
enum Command {
    /// Build triple files and the vocabulary from raw dialogue files.
    PrepareData {
        #[command(flatten)]
        common: Common,
    },
    /// MLE training of the generator or warm-up of one discriminator.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        target: Target,
    },
    /// Alternate policy-gradient generator blocks with discriminator blocks.
    TrainAdversarial {
        #[command(flatten)]
        common: Common,
    },
    /// Greedy responses for the queries of a triple file, one per line.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "adversarial")]
        stage: Stage,
        /// Triple file; defaults to paths.test.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Defaults to standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score hypotheses against references; prints a JSON report.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Triple file aligned with the hypotheses, for context matching.
        #[arg(long)]
        contexts: Option<PathBuf>,
    },
    /// CSV of both discriminator rewards for generated responses.
    AnalyzeRewards {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "adversarial")]
        stage: Stage,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Finite-difference check of every parameter of all three models.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
}

pub enum Failure {
    /// Bad arguments, config or missing input; nothing was computed.
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<pgan::Error> for Failure {
    fn from(e: pgan::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

macro_rules! with_precision {
    ($cfg:expr, $f:ident ( $($arg:expr),* )) => {
        match $cfg.precision {
            Precision::F32 => commands::$f::<f32>($($arg),*),
            Precision::F64 => commands::$f::<f64>($($arg),*),
        }
    };
}

fn run(cli: Cli) -> Result<(), Failure> {
    let common = match &cli.command {
        Command::PrepareData { common }
        | Command::Pretrain { common, .. }
        | Command::TrainAdversarial { common }
        | Command::Generate { common, .. }
        | Command::Evaluate { common, .. }
        | Command::AnalyzeRewards { common, .. }
        | Command::Gradcheck { common } => common,
    };
    let cfg = Config::load(common.config.as_deref(), &common.overrides).map_err(Failure::Usage)?;
    match &cli.command {
        Command::PrepareData { .. } => commands::prepare_data(&cfg),
        Command::Pretrain { target, .. } => with_precision!(cfg, pretrain(&cfg, *target)),
        Command::TrainAdversarial { .. } => with_precision!(cfg, train_adversarial(&cfg)),
        Command::Generate {
            stage, input, output, ..
        } => {
            with_precision!(cfg, generate(&cfg, *stage, input.as_deref(), output.as_deref()))
        }
        Command::Evaluate {
            hyp,
            reference,
            contexts,
            ..
        } => commands::evaluate_files(&cfg, hyp, reference, contexts.as_deref()),
        Command::AnalyzeRewards {
            stage, input, output, ..
        } => {
            with_precision!(cfg, analyze_rewards(&cfg, *stage, input.as_deref(), output.as_deref()))
        }
        Command::Gradcheck { .. } => commands::gradcheck(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with 2 on unknown subcommands and flags
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
