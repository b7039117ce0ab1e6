//! `bleval`: ingest flows, server logs and blacklist snapshots into a store
//! directory and evaluate the blacklists against them.
//!
//! Exit status is 0 on success, 1 for bad input or missing data and 2 when
//! an internal invariant is violated.

mod commands;
mod store;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};

use blacklist_eval::evaluator::GroundTruthKind;

#[derive(Parser, Debug)]
#[command(name = "bleval", version, about = "Evaluate IP blacklists against flow and log ground truth")]
pub struct Cli {
    /// Store directory.
    #[arg(long, global = true, default_value = "store")]
    pub store: PathBuf,
    /// Report output directory (default `<store>/reports/<command>`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Copy validated inputs into the store.
    Ingest {
        #[command(subcommand)]
        what: Ingest,
    },
    /// Flag remote scanners from receive-only host contacts.
    Detect(EvalArgs),
    /// Share of ground-truth addresses listed by each feed.
    Match(EvalArgs),
    /// Entries of each feed covered by each other feed.
    Intersect(EvalArgs),
    /// Match rate of fresh snapshots against reusing the first day's.
    Decay(EvalArgs),
    /// Scanners of one network later seen scanning another.
    Propagate(PropagateArgs),
    /// Benign remote clients listed by each feed.
    FpCheck(FpArgs),
    /// Budgeted lookups against cloud reputation providers.
    Cloud(CloudArgs),
    /// Every metric over a date range in one document.
    Report(EvalArgs),
    /// Generate a synthetic fixture tree with a ground-truth manifest.
    Simgen(SimgenArgs),
}

#[derive(Subcommand, Debug)]
pub enum Ingest {
    /// A network description (TOML).
    Network { file: PathBuf },
    /// One day of flow records for a network.
    Flows {
        #[arg(long)]
        network: String,
        #[arg(long)]
        date: NaiveDate,
        file: PathBuf,
    },
    /// One day of server logs for a network.
    Logs {
        #[arg(long)]
        network: String,
        #[arg(long)]
        date: NaiveDate,
        file: PathBuf,
    },
    /// One day of port contact events for a network.
    Ports {
        #[arg(long)]
        network: String,
        #[arg(long)]
        date: NaiveDate,
        file: PathBuf,
    },
    /// One daily blacklist snapshot.
    Feed {
        #[arg(long)]
        name: String,
        #[arg(long)]
        date: NaiveDate,
        file: PathBuf,
    },
    /// A whole tree laid out like `simgen` output.
    Tree { dir: PathBuf },
}

#[derive(Args, Debug, Clone, Default)]
pub struct DateArgs {
    #[arg(long, conflicts_with_all = ["from", "to"])]
    pub date: Option<NaiveDate>,
    #[arg(long, requires = "to")]
    pub from: Option<NaiveDate>,
    #[arg(long, requires = "from")]
    pub to: Option<NaiveDate>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct EvalArgs {
    #[command(flatten)]
    pub dates: DateArgs,
    /// Networks to evaluate (default all).
    #[arg(long, value_delimiter = ',')]
    pub network: Vec<String>,
    /// Feeds to evaluate (default all with a snapshot for the date).
    #[arg(long, value_delimiter = ',')]
    pub feeds: Vec<String>,
    /// Extra combined feeds, e.g. `a+b`. Repeatable.
    #[arg(long)]
    pub union: Vec<String>,
    #[arg(long, value_enum, default_value_t = Kind::Scanner)]
    pub kind: Kind,
    /// Scanner threshold override.
    #[arg(long)]
    pub threshold: Option<usize>,
    /// Excluded server ports override, e.g. `80,443`.
    #[arg(long, value_delimiter = ',')]
    pub exclude_ports: Option<Vec<u16>>,
}

#[derive(Args, Debug, Clone)]
pub struct PropagateArgs {
    #[arg(long)]
    pub from: NaiveDate,
    #[arg(long)]
    pub to: NaiveDate,
    /// Source networks (default all).
    #[arg(long, value_delimiter = ',')]
    pub network: Vec<String>,
    /// Target networks (default every other network).
    #[arg(long, value_delimiter = ',')]
    pub target: Vec<String>,
    #[arg(long)]
    pub threshold: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub exclude_ports: Option<Vec<u16>>,
}

#[derive(Args, Debug, Clone)]
pub struct FpArgs {
    #[command(flatten)]
    pub dates: DateArgs,
    #[arg(long, value_delimiter = ',')]
    pub network: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub feeds: Vec<String>,
    /// Highest per-flow score a benign client may have.
    #[arg(long, default_value_t = blacklist_eval::evaluator::DEFAULT_BENIGN_SCORE_MAX)]
    pub benign_max: u64,
}

#[derive(Args, Debug, Clone)]
pub struct CloudArgs {
    /// Provider description (TOML). Repeatable.
    #[arg(long, required = true)]
    pub provider: Vec<PathBuf>,
    /// File with one address per line.
    #[arg(long)]
    pub ips: PathBuf,
    /// Re-query cached verdicts older than this many hours.
    #[arg(long)]
    pub max_age: Option<i64>,
    /// Request timeout in seconds.
    #[arg(long, default_value_t = 30)]
    pub timeout: u64,
}

#[derive(Args, Debug, Clone)]
pub struct SimgenArgs {
    /// Scenario file (TOML). The tree is written to `--out`.
    pub scenario: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(ValueEnum, Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Kind {
    #[default]
    Scanner,
    LogAttacker,
    AlertedHighScore,
}

impl From<Kind> for GroundTruthKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Scanner => GroundTruthKind::Scanner,
            Kind::LogAttacker => GroundTruthKind::LogAttacker,
            Kind::AlertedHighScore => GroundTruthKind::AlertedHighScore,
        }
    }
}

/// Marks an error as a broken internal invariant (exit status 2).
#[derive(Debug)]
pub struct Internal(pub String);

impl std::fmt::Display for Internal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "internal invariant violated: {}", self.0)
    }
}

impl std::error::Error for Internal {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    std::panic::set_hook(Box::new(|info| {
        eprintln!("bleval: internal error: {info}");
    }));
    match std::panic::catch_unwind(|| commands::run(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("bleval: error: {e:#}");
            if e.chain().any(|c| c.is::<Internal>()) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
        Err(_) => ExitCode::from(2),
    }
}
