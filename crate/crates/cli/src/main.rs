use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spatialgl::ErrorKind;

mod commands;
mod config;

/// Bayesian spatial group-lasso regression of paired (left/right) imaging
/// phenotypes on SNP genotypes.
#[derive(Debug, Parser)]
#[command(name = "spatialgl", version)]
struct Cli {
    /// Log progress (-v) or debug detail (-vv).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the model to phenotype and genotype files.
    Fit(FitArgs),
    /// Write a synthetic data set drawn from the model.
    Simulate(SimulateArgs),
    #[command(name = "sim-study-1")]
    /// Accuracy and interval coverage study: spatial MCMC, spatial VB, independence MCMC.
    SimStudy1(StudyArgs),
    #[command(name = "sim-study-2")]
    /// Empirical FDR of the Bayesian FDR rule across a c* grid.
    SimStudy2(StudyTwoArgs),
    /// Score a rho grid (and optionally a lambda2 grid) by WAIC.
    Tune(TuneArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat `key = value` config file; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<String>,
    /// Master seed; every random stream is derived from it.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Phenotype CSV, one row per subject, columns ordered left/right per ROI.
    #[arg(long)]
    pub y: Option<String>,
    /// Genotype CSV, one row per subject.
    #[arg(long)]
    pub x: Option<String>,
    /// ROI neighborhood CSV (c/2 x c/2). Defaults to mean absolute phenotype correlations.
    #[arg(long)]
    pub a: Option<String>,
    /// Confounder CSV; phenotypes are replaced by OLS residuals on it.
    #[arg(long)]
    pub confounders: Option<String>,
    /// Input files start with a header row of names.
    #[arg(long)]
    pub header: bool,
    /// Fit the phenotypes as given instead of standardizing each column.
    #[arg(long)]
    pub no_standardize: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    /// gibbs or vb.
    #[arg(long)]
    pub mode: Option<commands::Mode>,
    /// Spatial dependence in [0, 1). Without it, VB uses 0.95 and Gibbs picks from --rho-grid by WAIC.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Comma-separated rho values scanned by WAIC (default 0,0.2,0.4,0.6,0.8,0.95).
    #[arg(long, value_delimiter = ',')]
    pub rho_grid: Option<Vec<f64>>,
    /// A positive value or `moment` (default).
    #[arg(long)]
    pub lambda2: Option<commands::Lambda2Arg>,
    /// Bayesian FDR level (default 0.05).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Effect-size threshold for tail probabilities (default 0.044).
    #[arg(long)]
    pub c_star: Option<f64>,
    /// Total Gibbs sweeps (default 10000).
    #[arg(long)]
    pub iters: Option<usize>,
    /// Sweeps discarded before retaining draws (default 5000).
    #[arg(long)]
    pub burnin: Option<usize>,
    /// Keep every k-th draw after burn-in (default 1).
    #[arg(long)]
    pub thin: Option<usize>,
    /// Credible interval level.
    #[arg(long)]
    pub level: Option<f64>,
    /// lambda2 values for the VB regularization path.
    #[arg(long, value_delimiter = ',')]
    pub path_grid: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub c: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Within-pair error correlation.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Prior scale used to draw the coefficients.
    #[arg(long)]
    pub lambda2: Option<f64>,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub c: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StudyTwoArgs {
    #[command(flatten)]
    pub study: StudyArgs,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub c_star_grid: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_delimiter = ',')]
    pub rho_grid: Option<Vec<f64>>,
    /// Also scan lambda2 at the WAIC-chosen rho.
    #[arg(long, value_delimiter = ',')]
    pub lambda2_grid: Option<Vec<f64>>,
    /// Write per-subject WAIC contributions for every grid point.
    #[arg(long)]
    pub waic: bool,
    /// Starting lambda2 for the rho scan: a positive value or `moment`.
    #[arg(long)]
    pub lambda2: Option<commands::Lambda2Arg>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<spatialgl::Error>())
        .map(spatialgl::Error::kind);
    match kind {
        Some(ErrorKind::Validation) => 2,
        Some(ErrorKind::Numerical) => 3,
        Some(ErrorKind::Io) => 4,
        None if err.chain().any(|e| e.is::<std::io::Error>()) => 4,
        None => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();

    let result = commands::configure_threads().and_then(|()| match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::SimStudy1(a) => commands::sim_study_1(a),
        Command::SimStudy2(a) => commands::sim_study_2(a),
        Command::Tune(a) => commands::tune(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
