//! Command-line front end wiring the pipeline end to end:
//! generate, fuse, train, tune, evaluate, predict and compare.
//!
//! Exit codes: 0 success, 1 validation failure (arguments, config, formats,
//! alignment), 2 runtime failure (I/O, divergence).

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use geofuse_core::Error;

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got '{s}'"))?;
    let w = w.parse().map_err(|_| format!("bad width in '{s}'"))?;
    let h = h.parse().map_err(|_| format!("bad height in '{s}'"))?;
    Ok((w, h))
}

#[derive(Parser, Debug)]
#[command(name = "geofuse", version, about = "Multi-sensor raster fusion and FCN segmentation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic co-registered scenes with ground truth.
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: usize,
        /// Tile extent as WxH, e.g. 64x64.
        #[arg(long, value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long)]
        out: PathBuf,
    },
    /// Stack lidar, SAR and optical rasters into one multi-channel raster.
    Fuse {
        #[arg(long)]
        lidar: PathBuf,
        #[arg(long)]
        sar: PathBuf,
        #[arg(long)]
        optical: PathBuf,
        /// Denoise each source before fusing.
        #[arg(long)]
        denoise: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a segmentation model on a scene directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Stop at the first epoch boundary past this wall-clock limit.
        #[arg(long)]
        budget_seconds: Option<f64>,
        /// Stop at the first epoch boundary past this multiply-accumulate count.
        #[arg(long)]
        budget_macs: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search hyperparameters with the particle swarm.
    Tune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Number of particles.
        #[arg(long)]
        swarm: usize,
        /// Iteration budget.
        #[arg(long)]
        iters: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a model against ground truth and audit the constraint set.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Config file carrying the audit thresholds (and eval options).
        #[arg(long)]
        thresholds: PathBuf,
        /// Output path for the machine-readable report; a .txt twin is
        /// written beside it.
        #[arg(long)]
        report: PathBuf,
    },
    /// Predict a label map for one raster.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate evaluation reports from several run directories.
    Compare {
        /// Run directories, each containing a report.kv.
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) | Error::NonFinite(_) | Error::AllEvaluationsNan => 2,
        _ => 1,
    }
}

/// Parse and execute one command line; returns the process exit code.
pub fn run(args: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let argv = args[1..].join(" ");
    let result = match &cli.command {
        Command::Gen {
            seed,
            count,
            size,
            out,
        } => commands::cmd_gen(&argv, *seed, *count, size.0, size.1, out),
        Command::Fuse {
            lidar,
            sar,
            optical,
            denoise,
            out,
        } => commands::cmd_fuse(&argv, lidar, sar, optical, *denoise, out),
        Command::Train {
            data,
            config,
            budget_seconds,
            budget_macs,
            out,
        } => commands::cmd_train(&argv, data, config, *budget_seconds, *budget_macs, out),
        Command::Tune {
            data,
            config,
            swarm,
            iters,
            seed,
            out,
        } => commands::cmd_tune(&argv, data, config, *swarm, *iters, *seed, out),
        Command::Eval {
            model,
            data,
            thresholds,
            report,
        } => commands::cmd_eval(&argv, model, data, thresholds, report),
        Command::Predict { model, input, out } => commands::cmd_predict(&argv, model, input, out),
        Command::Compare { runs, out } => commands::cmd_compare(&argv, runs, out),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}
