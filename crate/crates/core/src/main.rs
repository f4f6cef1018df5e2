use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use adalength::cli::{cmd_annotate, cmd_reward_curve, cmd_simulate, CliError};
use adalength::config::RunConfig;
use adalength::train::StackKind;

#[derive(Parser)]
#[command(name = "adalength", version, about = "Difficulty-adaptive length reward experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file (sectioned key = value).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed; overrides `grpo.seed`.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory; overrides `out`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the plain and thresholded adaptive reward on a length grid.
    RewardCurve {
        #[command(flatten)]
        common: Common,
    },
    /// Run the seeded GRPO simulation.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Reward stack; overrides `simulate.stack`.
        #[arg(long)]
        stack: Option<StackKind>,
        /// Number of updates; overrides `grpo.steps`.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Relabel an evaluation log by evaluator votes.
    Annotate {
        #[command(flatten)]
        common: Common,
        /// Evaluation log; overrides `annotate.eval_log`.
        #[arg(long, value_name = "PATH")]
        eval_log: Option<PathBuf>,
        /// Per-question outcomes; overrides `annotate.outcomes`.
        #[arg(long, value_name = "PATH")]
        outcomes: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.grpo.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<String, CliError> {
    let out = match cli.command {
        Command::RewardCurve { common } => cmd_reward_curve(&load(&common)?)?,
        Command::Simulate { common, stack, steps } => {
            let mut cfg = load(&common)?;
            if let Some(s) = stack {
                cfg.simulate.stack = s;
            }
            if let Some(n) = steps {
                cfg.grpo.steps = n;
            }
            cmd_simulate(&cfg)?
        }
        Command::Annotate { common, eval_log, outcomes } => {
            let mut cfg = load(&common)?;
            if eval_log.is_some() {
                cfg.annotate.eval_log = eval_log;
            }
            if outcomes.is_some() {
                cfg.annotate.outcomes = outcomes;
            }
            cmd_annotate(&cfg)?
        }
    };
    Ok(out.report)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
