//! `evcal`: simulate rigs, calibrate them, and score the results.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 malformed arguments, config or
//! data, 3 unmet precondition, 4 optimizer did not converge.

mod calibrate;
mod config;
mod error;
mod evaluate;
mod manifest;
mod plot;
mod simulate;

use clap::{Parser, Subcommand, ValueEnum};
use error::{Failure, Result};
use evcal::refine::Stage;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "evcal", version, about = "Targetless rotation and time-offset calibration for event-camera rigs")]
struct Cli {
    /// more log output (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Init,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a rig and write its sensor files, ground truth and a ready calibration config
    Simulate {
        /// rig description (TOML); defaults to a 30 s event/IMU/frame/LiDAR rig
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// override the rig duration, s
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// write events as text instead of the binary format
        #[arg(long)]
        text_events: bool,
        /// override any config key, e.g. --set event.jitter=0.0002
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Estimate extrinsic rotations, time offsets and gyro bias
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// stop after trace-correlation initialization, or run the joint refinement
        #[arg(long, value_enum)]
        stage: Option<StageArg>,
        /// plain unweighted least squares
        #[arg(long)]
        paper_faithful: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        /// override any config key, e.g. --set refine.knot_interval=0.01
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Compare a result with simulated ground truth, or run a duration sweep
    Evaluate {
        /// result.json from `calibrate`
        #[arg(long, required_unless_present = "sweep")]
        result: Option<PathBuf>,
        /// truth.json from `simulate`
        #[arg(long)]
        truth: PathBuf,
        /// metrics file, or the output directory with --sweep
        #[arg(long)]
        out: Option<PathBuf>,
        /// re-calibrate random sub-windows of several lengths
        #[arg(long, requires = "config")]
        sweep: bool,
        /// calibration config for --sweep
        #[arg(long)]
        config: Option<PathBuf>,
        /// window lengths for --sweep, s
        #[arg(long, value_delimiter = ',', default_value = "5,10,20,30,60")]
        durations: Vec<f64>,
        /// windows per length for --sweep
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        paper_faithful: bool,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, seed, duration, out, text_events, sets } => {
            simulate::run(&simulate::SimulateArgs { config, seed, duration, out, text_events, sets })
        }
        Command::Calibrate { config, seed, stage, paper_faithful, out, sets } => {
            let stage = stage.map(|s| match s {
                StageArg::Init => Stage::Init,
                StageArg::Full => Stage::Full,
            });
            calibrate::run(&calibrate::CalibrateArgs { config, seed, stage, paper_faithful, out, sets })
        }
        Command::Evaluate { result, truth, out, sweep, config, durations, trials, seed, paper_faithful, sets } => {
            if sweep {
                let config = config.ok_or_else(|| Failure::parse("--sweep needs --config"))?;
                let out = out.unwrap_or_else(|| PathBuf::from("sweep"));
                evaluate::run_sweep(&evaluate::SweepArgs { config, truth, durations, trials, seed, paper_faithful, out, sets })
            } else {
                let result = result.ok_or_else(|| Failure::parse("--result is required"))?;
                evaluate::run(&evaluate::EvaluateArgs { result, truth, out })
            }
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
    if let Err(f) = run(cli) {
        eprintln!("evcal: error: {f}");
        std::process::exit(f.class.exit_code());
    }
}
