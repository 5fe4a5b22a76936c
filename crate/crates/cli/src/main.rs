mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::HyperArgs;

/// Community detection on networks with node covariates (RB-SBM / RB-MMSBM).
#[derive(Debug, Parser)]
#[command(name = "rbsbm", version)]
struct Cli {
    /// Worker threads [default: all cores]
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

/// Where to read a network from: a directory written by `generate`/`import`,
/// or an edge list plus covariate table.
#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Saved network directory
    #[arg(long, conflicts_with_all = ["edges", "covariates"])]
    pub input: Option<PathBuf>,
    /// Edge list (`src dst` per line)
    #[arg(long, requires = "covariates")]
    pub edges: Option<PathBuf>,
    /// Covariate CSV with a header row, one row per node
    #[arg(long, requires = "edges")]
    pub covariates: Option<PathBuf>,
    /// Ground-truth labels, one per line
    #[arg(long, requires = "edges")]
    pub labels: Option<PathBuf>,
    /// Treat each listed edge as both directions
    #[arg(long)]
    pub undirected: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a synthetic network with its ground truth
    Generate(GenerateArgs),
    /// Fit a model and write memberships, parameters and traces
    Fit(FitArgs),
    /// Hide a fraction of edges, fit, and score the held-out pairs
    PredictLinks(FitArgs),
    /// Salient covariates and members of each community of a fit
    Explain(ExplainArgs),
    /// Fit a range of k and tabulate the ELBO
    SelectK(SelectKArgs),
    /// Compare a fit with known labels or a generated ground truth
    Evaluate(EvaluateArgs),
    /// Convert a public dataset into a saved network directory
    Import(ImportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// pure (RB-SBM) or mixed (RB-MMSBM)
    #[arg(long, default_value = "pure")]
    pub kind: String,
    #[arg(long)]
    pub n: usize,
    /// Covariates [default: 100]
    #[arg(long)]
    pub m: Option<usize>,
    /// Communities [default: ⌊log₂ n⌋]
    #[arg(long)]
    pub k: Option<usize>,
    /// Membership sampler: exact or gibbs[:SWEEPS]
    #[arg(long)]
    pub sampler: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    /// Output directory of `fit`
    #[arg(long)]
    pub fit: PathBuf,
    /// Covariates listed per community
    #[arg(long, default_value_t = 10)]
    pub top_n: usize,
    /// Where to write profiles.csv [default: the fit directory]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectKArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Candidates, as `lo..hi` (inclusive) or a comma list
    #[arg(long)]
    pub k_range: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Output directory of `fit`
    #[arg(long)]
    pub fit: PathBuf,
    /// Directory from `generate` (ground truth) or any saved network with labels
    #[arg(long)]
    pub truth: PathBuf,
    /// Where to write evaluation.txt [default: the fit directory]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    #[command(subcommand)]
    pub source: ImportSource,
}

#[derive(Debug, Subcommand)]
pub enum ImportSource {
    /// LINQS citation corpus (Cora, Citeseer)
    Linqs {
        #[arg(long)]
        content: PathBuf,
        #[arg(long)]
        cites: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Lazega lawyers: attribute table plus adjacency matrix
    Lazega {
        #[arg(long)]
        attributes: PathBuf,
        #[arg(long)]
        adjacency: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Edge list, covariate CSV and optional labels
    Table {
        #[command(flatten)]
        input: InputArgs,
        /// binary or continuous [default: binary if every value is 0 or 1]
        #[arg(long)]
        mode: Option<config::Mode>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Fit(a) => commands::fit(&a, false),
        Command::PredictLinks(a) => commands::fit(&a, true),
        Command::Explain(a) => commands::explain(&a),
        Command::SelectK(a) => commands::select_k(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Import(a) => commands::import(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
