//! Command-line front end. [`run`] parses arguments, dispatches, and maps
//! every outcome onto the exit-code contract: 0 success, 1 runtime or
//! verification failure, 2 usage error, 3 partial fold failure.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::ConfigFile;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

/// Environment variable capping the number of fold workers.
pub const THREADS_ENV: &str = "SSAS_NUM_THREADS";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure(String),
    Partial(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Failure(_) => EXIT_FAILURE,
            CliError::Partial(_) => EXIT_PARTIAL,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Failure(m) | CliError::Partial(m) => m,
        }
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        match e {
            crate::Error::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Failure(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "ssas", version, about = "Source selection and adversarial adaptation across domains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-domain bundle.
    GenData(GenDataArgs),
    /// Train on one held-out target.
    Train(TrainArgs),
    /// Leave-one-domain-out cross-validation.
    Losocv(LosocvArgs),
    /// Cross-validate the full method and each single-component removal.
    Ablate(AblateArgs),
    /// Compare top-ranked against randomly chosen source subsets.
    SourceCount(SourceCountArgs),
    /// Randomized exact checks of the divergence bound machinery.
    VerifyTheory(VerifyTheoryArgs),
    /// Consolidate run reports into one table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub domains: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub samples_per_class: Option<usize>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub shift: Option<f64>,
    /// Comma-separated domain ids.
    #[arg(long)]
    pub corrupt: Option<String>,
    #[arg(long)]
    pub corrupt_mult: Option<f64>,
    #[arg(long)]
    pub label_noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Training flags shared by every command that trains; each one overrides
/// the config file.
#[derive(Debug, Args)]
pub struct TrainOverrides {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs_ss: Option<usize>,
    #[arg(long)]
    pub epochs_as: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub noise_variance: Option<f64>,
    #[arg(long)]
    pub equal_weights: bool,
    /// Comma-separated components to switch off: mdc, mmd, adversarial, ss, noise.
    #[arg(long)]
    pub disable: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Ss,
    As,
    Full,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub target: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    pub stage: Stage,
    /// Directory of an earlier `--stage ss` run to adapt from.
    #[arg(long)]
    pub ss_run: Option<PathBuf>,
    /// Also write wall-clock stage durations to timing.json.
    #[arg(long)]
    pub timing: bool,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct LosocvArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "mdc,mmd,adversarial,ss,noise")]
    pub toggles: String,
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct SourceCountArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated subset sizes.
    #[arg(long)]
    pub sizes: String,
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct VerifyTheoryArgs {
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 6)]
    pub max_points: usize,
    #[arg(long, default_value_t = 16)]
    pub max_hypotheses: usize,
    #[arg(long, default_value_t = 4)]
    pub max_sources: usize,
    /// Directory for summary.json; the summary is always printed.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    pub format: ReportFormat,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return if code == 0 { EXIT_OK } else { EXIT_USAGE };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Losocv(a) => commands::losocv(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::SourceCount(a) => commands::source_count(&a),
        Command::VerifyTheory(a) => commands::verify_theory(&a),
        Command::Report(a) => commands::report(&a),
    }
}
