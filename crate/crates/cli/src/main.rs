//! `combent`: batch pipelines from pump configs and digitizer records to
//! entanglement verdicts. JSON documents are always written; `--format csv`
//! adds plot-ready CSV tables next to them.

mod commands;
mod error;
mod select;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use combent::comb::KSubset;
use combent::loss::DEFAULT_ETA_POINTS;
use combent::reconstruction::DEFAULT_BOOTSTRAP_RESAMPLES;

use commands::{AnalyzeInput, AnalyzeOptions, Format, LossOptions, Output};
use error::{CliError, CliResult};
use select::ModeSelection;

pub const DEFAULT_SEGMENTS: usize = 6;

#[derive(Parser)]
#[command(name = "combent", version, about = "Frequency-comb Gaussian entanglement pipelines")]
struct Cli {
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed for every random choice (bootstrap, bipartition sampling).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SelectArgs {
    /// Comb indices to test, e.g. `-6,-4,-2,0,2,4,6`.
    #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
    modes: Option<Vec<i64>>,
    /// Restrict to one correlation family: K0, K+1 or K-1.
    #[arg(long)]
    subset: Option<KSubset>,
    /// Keep this many modes nearest the comb centre.
    #[arg(long)]
    count: Option<usize>,
}

impl From<SelectArgs> for ModeSelection {
    fn from(a: SelectArgs) -> Self {
        ModeSelection {
            modes: a.modes,
            subset: a.subset,
            count: a.count,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Output covariance of a pumped resonator for vacuum input.
    Simulate {
        /// Pump config JSON.
        config: PathBuf,
    },
    /// Fit gain and added noise per frequency from Planck sweeps.
    Calibrate {
        /// Calibration manifest JSON.
        manifest: PathBuf,
    },
    /// Per-segment physical covariance matrices from a digitizer record.
    Reconstruct {
        /// Reconstruction config JSON.
        config: PathBuf,
        /// Number of segments (default: the record's own, else 6).
        #[arg(long)]
        segments: Option<usize>,
        #[arg(long = "bootstrap-B", default_value_t = DEFAULT_BOOTSTRAP_RESAMPLES)]
        bootstrap_b: usize,
    },
    /// Bipartition entanglement test with segment combination.
    Analyze {
        /// `reconstruction.json` written by `reconstruct`.
        #[arg(long, conflicts_with_all = ["covariance", "sigma"])]
        reconstruction: Option<PathBuf>,
        /// Covariance JSON, one per segment.
        #[arg(long)]
        covariance: Vec<PathBuf>,
        /// Uncertainty JSON matching each covariance; zero if omitted.
        #[arg(long)]
        sigma: Vec<PathBuf>,
        #[command(flatten)]
        select: SelectArgs,
        /// Skip the local rotation removing IQ cross-correlations.
        #[arg(long)]
        no_rotate: bool,
        /// Test this many random bipartitions instead of all of them.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Purity and entanglement margin under uniform loss.
    LossSweep {
        /// Covariance JSON.
        covariance: PathBuf,
        #[command(flatten)]
        select: SelectArgs,
        #[arg(long, default_value_t = DEFAULT_ETA_POINTS)]
        points: usize,
        #[arg(long, default_value_t = 0.0)]
        eta_min: f64,
        #[arg(long, default_value_t = 1.0)]
        eta_max: f64,
    },
    /// Correlation graph of a pump config.
    Graph {
        config: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<Output> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return error::usage("--jobs must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let mut out = Output::new(cli.out_dir, cli.format);
    match cli.command {
        Command::Simulate { config } => commands::cmd_simulate(&mut out, &config)?,
        Command::Graph { config } => commands::cmd_graph(&mut out, &config)?,
        Command::Calibrate { manifest } => commands::cmd_calibrate(&mut out, &manifest)?,
        Command::Reconstruct {
            config,
            segments,
            bootstrap_b,
        } => commands::cmd_reconstruct(&mut out, &config, segments, bootstrap_b, cli.seed)?,
        Command::Analyze {
            reconstruction,
            covariance,
            sigma,
            select,
            no_rotate,
            samples,
        } => {
            let input = match reconstruction {
                Some(p) => AnalyzeInput::Reconstruction(p),
                None => AnalyzeInput::Files {
                    covariances: covariance,
                    sigmas: sigma,
                },
            };
            let opts = AnalyzeOptions {
                selection: select.into(),
                rotate: !no_rotate,
                samples,
                seed: cli.seed,
            };
            commands::cmd_analyze(&mut out, &input, &opts)?
        }
        Command::LossSweep {
            covariance,
            select,
            points,
            eta_min,
            eta_max,
        } => {
            let opts = LossOptions {
                selection: select.into(),
                points,
                eta_min,
                eta_max,
            };
            commands::cmd_loss_sweep(&mut out, &covariance, &opts)?
        }
    }
    Ok(out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(out) => {
            for path in out.written() {
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
