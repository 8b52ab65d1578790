//! The `diffpogan` command line: dataset generation, training, evaluation,
//! the two ablations and run reports.
//!
//! [`run`] parses arguments and returns the process exit code: 0 on success,
//! 1 for usage or configuration problems, 2 for I/O and file-format problems,
//! 3 for numeric failures during training.

mod commands;
mod summary;

pub use commands::{ablate_downweight, ablate_t, eval, gen_data, report, train, EvalReport};
pub use summary::{final_score, read_run, RunReport, DEFAULT_WINDOW};

use clap::{Args, Parser, Subcommand};
use diffpogan_core::Error;
use std::ffi::OsString;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "diffpogan",
    version,
    about = "Diffusion policies with adversarial regularization for offline RL"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an offline dataset from a toy environment.
    GenData(GenDataArgs),
    /// Train one run.
    Train(TrainArgs),
    /// Evaluate a checkpoint and print a JSON summary.
    Eval(EvalArgs),
    /// Train once per diffusion step count.
    AblateT(AblateTArgs),
    /// Train with and without the down-weight factor.
    AblateDownweight(AblateDownweightArgs),
    /// Aggregate run directories into one CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub env: String,
    #[arg(long)]
    pub n: usize,
    /// Fraction of transitions from the scripted expert (pointmaze only).
    #[arg(long, default_value_t = 0.3)]
    pub quality_mix: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Continue from the checkpoint in `out_dir` when there is one.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// A run directory or its checkpoint directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub env: String,
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Take the score anchors from this dataset instead of the checkpoint.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateTArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "2,5,8,10,15,20")]
    pub t_list: Vec<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Number of trailing evaluations averaged into the summary score.
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
    /// Sub-runs trained at the same time.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct AblateDownweightArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub run_dirs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
}

/// Process exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Usage(_) | Error::Config(_) | Error::Dimension(_) => 1,
        Error::Io { .. } | Error::Format { .. } => 2,
        Error::Numeric(_) => 3,
    }
}

/// Runs one command line and returns the exit code. Errors go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(command: Command) -> diffpogan_core::Result<()> {
    match command {
        Command::GenData(a) => gen_data(&a.env, a.n, a.quality_mix, a.seed, &a.out),
        Command::Train(a) => train(&a.config, &a.data, &a.out_dir, a.resume).map(|_| ()),
        Command::Eval(a) => {
            let r = eval(&a.checkpoint, &a.env, a.episodes, a.seed, a.data.as_deref())?;
            println!("{}", serde_json::to_string(&r).expect("report serializes"));
            Ok(())
        }
        Command::AblateT(a) => {
            ablate_t(&a.config, &a.data, &a.t_list, &a.out_dir, a.window, a.jobs).map(|_| ())
        }
        Command::AblateDownweight(a) => {
            ablate_downweight(&a.config, &a.data, &a.out_dir, a.window, a.jobs).map(|_| ())
        }
        Command::Report(a) => report(&a.run_dirs, &a.out, a.window).map(|_| ()),
    }
}
