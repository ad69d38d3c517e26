//! `radiomap` command line: runs pipeline stages against a TOML config.
//!
//! Exit codes are a stable contract: 0 success, 2 usage error, 3 data error,
//! 4 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use radiomap::pipeline::{self, Stage};

#[derive(Parser)]
#[command(
    name = "radiomap",
    version,
    about = "3D radio maps from sparse aerial measurements: propagation fits, \
             shadowing statistics, spatial correlation, and Kriging interpolation"
)]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (defaults to the core count).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate path-loss model fits against the measurements.
    Fit,
    /// Extract shadowing and fit its distribution per height.
    Shadowing,
    /// Estimate spatial correlation and fit the 3D model.
    Correlate,
    /// Export the semi-variogram of the active correlation model.
    Variogram,
    /// Predict received power at the configured target locations.
    Krige,
    /// Cross-validated RMSE of Kriging against the path-loss baseline.
    Xval,
    /// Generate the full 3D radio-map grid.
    Map,
    /// Synthesize a ground-truth dataset from the configured scenario.
    Synth,
}

impl Command {
    fn stage(&self) -> Stage {
        match self {
            Command::Fit => Stage::Fit,
            Command::Shadowing => Stage::Shadowing,
            Command::Correlate => Stage::Correlate,
            Command::Variogram => Stage::Variogram,
            Command::Krige => Stage::Krige,
            Command::Xval => Stage::Xval,
            Command::Map => Stage::Map,
            Command::Synth => Stage::Synth,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(config_path) = cli.config else {
        eprintln!("error: --config <path> is required");
        return ExitCode::from(2);
    };

    pipeline::init_threads(cli.threads);

    let (config, raw) = match pipeline::load_config(&config_path) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };

    match pipeline::run_pipeline(&config, &raw, &[cli.command.stage()], &cli.out, cli.seed) {
        Ok(artifacts) => {
            for path in artifacts {
                println!("{}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
