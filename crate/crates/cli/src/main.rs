//! `pcinf`: staged command-line pipeline for partial-correlation influence
//! analysis. Each stage reads the previous stage's files, writes its own
//! exports plus `manifest_<stage>.json`, and reports fatal errors as JSON
//! on stderr (exit 2 for bad input or configuration, 3 for computation).

mod failure;
mod manifest;
mod settings;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pcinf_core::influence::Direction;
use pcinf_core::pipeline::Method;
use pcinf_core::sectors::BetaKind;

use failure::Outcome;
use settings::Settings;
use stages::Context;

#[derive(Parser)]
#[command(name = "pcinf", version, about = "Partial-correlation influence analysis of equity markets")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Settings file of `key = value` lines; flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory [default: out]
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads, 0 for all logical cores
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Seed for the shuffle null
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Index ticker; returns-based stages default to the table's index column
    #[arg(long, global = true)]
    index: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct SignificanceArgs {
    /// shuffle or fisher
    #[arg(long)]
    pub method: Option<Method>,

    /// Two-tailed significance level
    #[arg(long)]
    pub level: Option<f64>,

    /// Number of shuffle replicates
    #[arg(long)]
    pub replicates: Option<usize>,

    /// Shuffle blocks of this many days instead of single days
    #[arg(long)]
    pub segment_length: Option<usize>,

    /// Cap on null triples sampled per replicate
    #[arg(long)]
    pub max_triples: Option<usize>,

    /// Average only significant triples (true or false)
    #[arg(long)]
    pub filtered: Option<bool>,

    /// outgoing or incoming
    #[arg(long)]
    pub direction: Option<Direction>,
}

#[derive(Args)]
pub struct IngestArgs {
    /// Long-format price CSV `date,ticker,adj_close[,volume]`
    #[arg(long)]
    pub prices: Option<PathBuf>,

    /// Largest tolerated fraction of flat days
    #[arg(long)]
    pub max_flat_fraction: Option<f64>,
}

#[derive(Args)]
pub struct InfluenceArgs {
    /// Returns table written by `ingest`
    #[arg(long)]
    pub returns: Option<PathBuf>,

    #[command(flatten)]
    pub significance: SignificanceArgs,
}

#[derive(Args)]
pub struct StabilityArgs {
    /// Returns table written by `ingest`
    #[arg(long)]
    pub returns: Option<PathBuf>,

    /// Quarters with fewer trading days are dropped
    #[arg(long)]
    pub min_quarter_days: Option<usize>,

    #[command(flatten)]
    pub significance: SignificanceArgs,
}

#[derive(Args)]
pub struct SectorsArgs {
    /// `influence_matrix.csv` written by `influence`
    #[arg(long)]
    pub matrix: Option<PathBuf>,

    /// Sector map CSV `ticker,sector`
    #[arg(long)]
    pub sectors: Option<PathBuf>,

    /// Beta used for prediction rates: rectified or raw
    #[arg(long)]
    pub beta: Option<BetaKind>,

    /// Rolling window length in days; needs `--returns`
    #[arg(long)]
    pub window: Option<usize>,

    /// Days between rolling windows [default: window]
    #[arg(long)]
    pub step: Option<usize>,

    /// Returns table for rolling windows
    #[arg(long)]
    pub returns: Option<PathBuf>,

    #[command(flatten)]
    pub significance: SignificanceArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Load prices, drop illiquid stocks and write log returns
    Ingest(IngestArgs),
    /// Influence tensor, thresholds, stock influence matrix and ranking
    Influence(InfluenceArgs),
    /// Quarterly rankings, Kendall tau matrix and decay fit
    Stability(StabilityArgs),
    /// Sector attribution, prediction rates and sector closeness
    Sectors(SectorsArgs),
}

fn run(cli: Cli) -> Outcome<String> {
    let settings = match &cli.global.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    let jobs = settings.pick_or("jobs", cli.global.jobs, 0usize)?;
    if jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| failure::Failure::config("config", format!("thread pool: {e}")))?;
    }
    let ctx = Context {
        out: settings.pick_or("out", cli.global.out, PathBuf::from("out"))?,
        seed: settings.pick_or("seed", cli.global.seed, 0u64)?,
        index: settings.pick("index", cli.global.index)?,
        jobs: rayon::current_num_threads(),
        settings,
    };
    match cli.command {
        Command::Ingest(args) => stages::ingest(&ctx, args),
        Command::Influence(args) => stages::influence(&ctx, args),
        Command::Stability(args) => stages::stability(&ctx, args),
        Command::Sectors(args) => stages::sectors(&ctx, args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PCINF_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(failure) => {
            log::error!("{failure}");
            eprintln!("{}", failure.to_json());
            ExitCode::from(failure.exit as u8)
        }
    }
}
