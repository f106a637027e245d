//! `darkmatter` batch front end. Machine-readable artifacts go to `--out`;
//! human summaries go to stderr.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Io(String),
    Compute(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Io(_) => 4,
            CliError::Compute(_) => 5,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::Compute(m) => write!(f, "computation failed: {m}"),
        }
    }
}

impl From<darkmatter::Error> for CliError {
    fn from(e: darkmatter::Error) -> Self {
        use darkmatter::Error as E;
        match e {
            E::Validation(_) | E::Json(_) => CliError::Config(e.to_string()),
            E::Io(_) | E::Csv(_) => CliError::Io(e.to_string()),
            other => CliError::Compute(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "darkmatter", version = env!("DARKMATTER_VERSION"))]
#[command(about = "Dark-matter risk premiums, Tanaka decompositions and option-return statistics")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON configuration (model config, or pipeline config for `empirics`); built-in defaults when omitted
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random stream of the run
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Monte Carlo paths per measure
    #[arg(long, global = true, default_value_t = 100_000)]
    pub paths: usize,
    /// Time steps per path
    #[arg(long, global = true, default_value_t = 100)]
    pub steps: usize,
    /// Moneyness (strike over initial futures price)
    #[arg(long, global = true, default_value_t = 1.03)]
    pub k: f64,
    /// Local-time bandwidth; defaults to k sqrt(v0 dt)
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    /// Worker threads; results do not depend on this
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check a model configuration and write its canonical form
    Validate,
    /// Simulate an ensemble and dump every path
    Simulate {
        #[arg(long, value_enum, default_value_t = MeasureArg::Q)]
        measure: MeasureArg,
    },
    /// Per-path Tanaka decomposition with residual summary
    TanakaCheck {
        #[arg(long, value_enum, default_value_t = MeasureArg::P)]
        measure: MeasureArg,
        #[arg(long, value_enum, default_value_t = SideArg::Call)]
        side: SideArg,
    },
    /// Call, put and straddle risk-premium decompositions at --k
    Premia {
        /// Put moneyness
        #[arg(long, default_value_t = 0.97)]
        k_put: f64,
        /// Also decompose the squared-log contract
        #[arg(long)]
        squared_log: bool,
    },
    /// Closed-form crossing premium on a strike grid
    ClosedForm {
        /// Jump family; taken from --config when omitted
        #[arg(long, value_enum)]
        law: Option<LawArg>,
        /// Add quadrature-oracle columns
        #[arg(long)]
        compare_oracle: bool,
    },
    /// Cycle returns, state partitions, HAC and bootstrap tables
    Empirics {
        /// Option-chain CSV
        #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
        chains: Option<PathBuf>,
        /// Daily underlying CSV (added to levels found in the chain)
        #[arg(long)]
        daily: Option<PathBuf>,
        /// Generate a synthetic panel from --seed instead of reading chains
        #[arg(long)]
        synthetic: bool,
        /// Cycles in the synthetic panel
        #[arg(long, default_value_t = 200)]
        cycles: usize,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum MeasureArg {
    P,
    Q,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum SideArg {
    Call,
    Put,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
pub enum LawArg {
    Merton,
    Kou,
    Dps,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
