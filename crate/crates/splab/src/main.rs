//! `splab` command line: config-driven experiment runner.
//!
//! Exit codes: 0 success, 2 config error, 3 internal invariant violation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use splab::config::{ExperimentConfig, ExperimentKind, OutputFormat};
use splab::experiments::run_experiment;

#[derive(Parser)]
#[command(name = "splab", version, about = "spectral projector laboratory")]
struct Cli {
    #[command(subcommand)]
    experiment: Experiment,
}

#[derive(Subcommand)]
enum Experiment {
    /// Scalar spectral quantities over a block grid
    Quantities(RunArgs),
    /// Randomized sweep of the deterministic perturbation inequalities
    PerturbationCheck(RunArgs),
    /// Distance between the scaled statistic and its limit law
    CltDistance(RunArgs),
    /// Coverage of the multiplier-bootstrap quantile
    BootstrapCoverage(RunArgs),
    /// Stability of the declared model scale relations
    ModelRelations(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Key-value config file
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format
    #[arg(long, value_parser = ["csv", "json"])]
    format: Option<String>,
    /// Worker threads (default: available cores)
    #[arg(long)]
    threads: Option<usize>,
}

impl Experiment {
    fn split(self) -> (ExperimentKind, RunArgs) {
        match self {
            Experiment::Quantities(a) => (ExperimentKind::Quantities, a),
            Experiment::PerturbationCheck(a) => (ExperimentKind::PerturbationCheck, a),
            Experiment::CltDistance(a) => (ExperimentKind::CltDistance, a),
            Experiment::BootstrapCoverage(a) => (ExperimentKind::BootstrapCoverage, a),
            Experiment::ModelRelations(a) => (ExperimentKind::ModelRelations, a),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = cli.experiment.split();

    #[cfg(feature = "parallel")]
    if let Some(threads) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("splab: could not configure {threads} threads: {e}");
        }
    }
    #[cfg(not(feature = "parallel"))]
    if args.threads.is_some() {
        eprintln!("splab: built without the `parallel` feature, --threads ignored");
    }

    let mut cfg = match ExperimentConfig::load(&args.config, kind) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("splab: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = args.seed {
        cfg.set("seed", seed.to_string());
    }
    if let Some(fmt) = &args.format {
        cfg.set("format", fmt.clone());
    }
    if let Some(out) = &args.out {
        cfg.set("out", out.display().to_string());
    }
    let format = match cfg.format() {
        Ok(f) => f,
        Err(e) => {
            eprintln!("splab: {e}");
            return ExitCode::from(2);
        }
    };

    let report = match run_experiment(&cfg) {
        Ok(r) => r,
        Err(e @ splab::Error::Config(_)) | Err(e @ splab::Error::InvalidInput(_)) => {
            eprintln!("splab: {e}");
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("splab: {e}");
            return ExitCode::from(3);
        }
    };
    if report.summary.get("limit_draws_warning") == Some(&1.0) {
        eprintln!("splab: warning: limit_draws < 10 * mc_runs, the noise floor will dominate");
    }

    let payload = match format {
        OutputFormat::Csv => report.to_csv(),
        OutputFormat::Json => match report.to_json() {
            Ok(j) => j,
            Err(e) => {
                eprintln!("splab: {e}");
                return ExitCode::from(3);
            }
        },
    };
    if let Some(path) = cfg.out_path() {
        if let Err(e) = std::fs::write(path, payload) {
            eprintln!("splab: cannot write {path}: {e}");
            return ExitCode::from(3);
        }
    } else {
        print!("{payload}");
    }

    // A perturbation-inequality breach is a build-stopping bug, not a result.
    if report.summary.get("violations").copied().unwrap_or(0.0) > 0.0 {
        eprintln!("splab: perturbation inequality violated; aborting with status 3");
        return ExitCode::from(3);
    }
    ExitCode::SUCCESS
}
