use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Thread count for the parallel pipeline; unset uses every core.
const THREADS_ENV: &str = "ISONRSFM_THREADS";

#[derive(Parser)]
#[command(name = "isonrsfm", version, about = "Robust isometric non-rigid structure-from-motion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cylinder dataset.
    Synth(SynthArgs),
    /// Reconstruct a dataset and write clouds plus a run report.
    Reconstruct(ReconstructArgs),
    /// Score a reconstruction against ground truth, or run a contamination sweep.
    Evaluate(EvaluateArgs),
    /// Solve one cubic pair and print every candidate.
    SolvePair(PairArgs),
    /// Print the cubic pair assembled from pair differentials.
    DumpCubics(DumpArgs),
}

#[derive(Args, Default, Clone)]
pub struct SynthOverrides {
    /// JSON file with generator parameters; flags override it.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub images: Option<usize>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub noise_px: Option<f64>,
    #[arg(long)]
    pub error_fraction: Option<f64>,
    /// Uniform per-axis perturbation with this standard deviation.
    #[arg(long, conflicts_with_all = ["error_min_px", "error_max_px"])]
    pub error_std_px: Option<f64>,
    /// Perturbation magnitude range; both bounds are required together.
    #[arg(long, requires = "error_max_px")]
    pub error_min_px: Option<f64>,
    #[arg(long, requires = "error_min_px")]
    pub error_max_px: Option<f64>,
    /// Keep the sheet flat.
    #[arg(long)]
    pub flat: bool,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub synth: SynthOverrides,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SolverArg {
    Substitution,
    Resultant,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum BaselineArg {
    Wide,
    Short,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SmootherArg {
    Bending,
    Schwarzian,
}

/// Flags named after the pipeline config keys.
#[derive(Args, Default, Clone)]
pub struct ConfigOverrides {
    /// JSON pipeline config; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub solver: Option<SolverArg>,
    #[arg(long, value_enum)]
    pub baseline: Option<BaselineArg>,
    #[arg(long)]
    pub subset_size: Option<usize>,
    #[arg(long)]
    pub short_subset_size: Option<usize>,
    #[arg(long)]
    pub short_references: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mad_lambda: Option<f64>,
    #[arg(long, value_enum)]
    pub smoother: Option<SmootherArg>,
    #[arg(long)]
    pub consensus_refit: Option<bool>,
    #[arg(long)]
    pub mad_delta_fraction: Option<f64>,
    #[arg(long)]
    pub mad_majority: Option<f64>,
    #[arg(long)]
    pub flag_factor: Option<f64>,
    #[arg(long)]
    pub epsilon_deg: Option<f64>,
    #[arg(long)]
    pub min_images: Option<usize>,
    #[arg(long)]
    pub neighbors: Option<usize>,
    #[arg(long)]
    pub isometry_threshold: Option<f64>,
    #[arg(long)]
    pub inlier_fraction: Option<f64>,
    #[arg(long)]
    pub hallucinate_grid: Option<bool>,
    #[arg(long)]
    pub grid_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct ReconstructArgs {
    /// Dataset directory holding correspondences.txt.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory for clouds, report.json and timings.json.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigOverrides,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Directory written by `reconstruct`.
    #[arg(long, required_unless_present = "sweep", requires = "ground_truth")]
    pub reconstruction: Option<PathBuf>,
    /// Dataset directory with ground_truth.csv and labels.csv.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    /// Write the evaluation report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run synth, reconstruct and evaluate over contamination fractions and write a CSV.
    #[arg(long, conflicts_with = "reconstruction")]
    pub sweep: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5")]
    pub fractions: Vec<f64>,
    /// Seeds 0..n averaged per sweep row.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[command(flatten)]
    pub synth: SynthOverrides,
    #[command(flatten)]
    pub config: ConfigOverrides,
}

#[derive(Args)]
pub struct PairArgs {
    /// Pair differentials JSON (see dump-cubics), or a cubic pair JSON with --cubics.
    #[arg(long)]
    pub input: PathBuf,
    /// Treat the input as a cubic pair printed by dump-cubics.
    #[arg(long)]
    pub cubics: bool,
    #[arg(long, value_enum, default_value = "resultant")]
    pub solver: SolverArg,
}

#[derive(Args)]
pub struct DumpArgs {
    #[arg(long)]
    pub input: PathBuf,
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().map_err(|_| anyhow::anyhow!("{THREADS_ENV} must be a thread count, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Reconstruct(a) => commands::reconstruct(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::SolvePair(a) => commands::solve_pair(&a),
        Command::DumpCubics(a) => commands::dump_cubics(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
