//! `pvdet` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error,
//! 3 configuration invariant or self-check failure.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod demo;
pub mod error;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::Value;

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "pvdet", version, about = "Point-voxel 3D detection pipeline tools")]
pub struct Cli {
    /// JSON pipeline configuration; omitted keys take defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Voxelize every scan under a KITTI-style directory.
    Voxelize {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-point attention targets from labels.
    Attention {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Point and anchor training targets.
    Targets {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Augment frames and write them back in KITTI layout.
    Augment {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Directory holding a ground-truth database for object pasting.
        #[arg(long)]
        db: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
    },
    /// Score filtering, 3D NMS and top-k over a detection CSV.
    Nms {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip the per-class score thresholds.
        #[arg(long)]
        no_score_filter: bool,
    },
    /// KITTI-style AP11/AP40 of detections against labels.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        det: PathBuf,
        /// Calibration root (default: the ground-truth directory).
        #[arg(long)]
        calib: Option<PathBuf>,
        /// Write precision/recall samples as CSV.
        #[arg(long)]
        pr_csv: Option<PathBuf>,
    },
    /// Generate labelled synthetic frames.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        frames: usize,
        #[arg(long)]
        seed: u64,
        /// Also write a ground-truth database built from the frames.
        #[arg(long)]
        db_out: Option<PathBuf>,
    },
    /// End-to-end pipeline on synthetic frames with noisy detections.
    Demo {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        frames: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Write KITTI-format ground truth and detections plus PR curves here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> CliResult<Value> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    match &cli.cmd {
        Command::Augment { seed, .. } | Command::Synth { seed, .. } | Command::Demo { seed, .. } => cfg.seed = *seed,
        _ => {}
    }
    cfg.validate()?;
    match cli.cmd {
        Command::Voxelize { data, out } => commands::voxelize_cmd(&cfg, &data, &out),
        Command::Attention { data, out } => commands::attention_cmd(&cfg, &data, &out),
        Command::Targets { data, out } => commands::targets_cmd(&cfg, &data, &out),
        Command::Augment { data, out, db, .. } => commands::augment_cmd(&cfg, &data, &out, db.as_deref()),
        Command::Nms {
            input,
            out,
            no_score_filter,
        } => commands::nms_cmd(&cfg, &input, &out, !no_score_filter),
        Command::Eval { gt, det, calib, pr_csv } => {
            commands::eval_cmd(&cfg, &gt, &det, calib.as_deref(), pr_csv.as_deref())
        }
        Command::Synth {
            out, frames, db_out, ..
        } => commands::synth_cmd(&cfg, &out, frames, db_out.as_deref()),
        Command::Demo { frames, noise, out, .. } => demo::run_with_output(&cfg, frames, noise, out.as_deref()),
    }
}

fn run_parsed(cli: Cli) -> CliResult<()> {
    let report = cli.report.clone();
    let value = match cli.threads {
        Some(0) => return Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(e.to_string()))?
            .install(|| execute(cli))?,
        None => execute(cli)?,
    };
    report::emit_json(report.as_deref(), &value)
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run_parsed(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("pvdet: error: {e}");
            e.exit_code()
        }
    }
}
