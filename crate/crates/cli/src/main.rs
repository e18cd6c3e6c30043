//! `eecal`: simulate datasets, estimate EE poses, calibrate and evaluate.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eecal_core::evaluation::{evaluate_dataset, rotation_error, translation_error};
use eecal_core::json::to_fixed_string;
use eecal_core::simulator::generate_dataset;
use eecal_core::{Dataset, Error, Pipeline, PipelineConfig};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "eecal", version, about = "Markerless depth-camera to robot-base calibration")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output path (file or directory, depending on the subcommand).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset into the output directory.
    Simulate,
    /// Estimate the camera-to-base calibration of a dataset.
    Calibrate {
        dataset: PathBuf,
        /// Aggregate the raw RPT/KPM poses instead of ICP-refined ones.
        #[arg(long)]
        no_icp: bool,
    },
    /// Estimate the EE pose candidates of a single frame.
    Estimate {
        dataset: PathBuf,
        #[arg(long)]
        frame: usize,
        #[arg(long)]
        no_icp: bool,
    },
    /// Score every pose estimator against the dataset ground truth.
    Evaluate { dataset: PathBuf },
}

/// Failure with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => 2,
            Error::Io { .. } | Error::Json { .. } | Error::Ply { .. } => 3,
            Error::NoUsableFrames { .. } => 4,
            Error::MissingGroundTruth => 6,
            _ => 1,
        };
        Failure::new(code, e.to_string())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command, cli.common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}

fn load_config(common: &Common) -> CliResult<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Failure::from(Error::Io {
            path: parent.to_path_buf(),
            source: e,
        }))?;
    }
    std::fs::write(path, text).map_err(|e| {
        Failure::from(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    to_fixed_string(value).map_err(|e| Failure::new(1, format!("cannot serialize result: {e}")))
}

/// Writes JSON to `--output` when given, otherwise to stdout.
fn emit_json<T: Serialize>(common: &Common, value: &T) -> CliResult {
    let text = to_json(value)?;
    match &common.output {
        Some(path) => write_text(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(command: Command, common: Common) -> CliResult {
    if let Some(jobs) = common.jobs {
        if jobs == 0 {
            return Err(Failure::new(2, "--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::new(1, format!("cannot start worker pool: {e}")))?;
    }
    let mut cfg = load_config(&common)?;
    match command {
        Command::Simulate => simulate(&cfg, &common),
        Command::Calibrate { dataset, no_icp } => {
            cfg.icp.enabled &= !no_icp;
            calibrate(&cfg, &common, &dataset)
        }
        Command::Estimate { dataset, frame, no_icp } => {
            cfg.icp.enabled &= !no_icp;
            estimate(&cfg, &common, &dataset, frame)
        }
        Command::Evaluate { dataset } => {
            cfg.icp.enabled = true;
            evaluate(&cfg, &common, &dataset)
        }
    }
}

fn simulate(cfg: &PipelineConfig, common: &Common) -> CliResult {
    let out = common
        .output
        .as_ref()
        .ok_or_else(|| Failure::new(2, "simulate needs --output DIR"))?;
    let dataset = generate_dataset(&cfg.seeded_scenario())?;
    dataset.save(out)?;
    for w in &dataset.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!("wrote {} frames to {}", dataset.frames.len(), out.display());
    Ok(())
}

fn open(cfg: &PipelineConfig, dir: &Path) -> CliResult<(Dataset, Pipeline)> {
    let dataset = Dataset::load(dir)?;
    let pipeline = Pipeline::new(cfg, &dataset.model)?;
    Ok((dataset, pipeline))
}

fn calibrate(cfg: &PipelineConfig, common: &Common, dir: &Path) -> CliResult {
    let (dataset, pipeline) = open(cfg, dir)?;
    let result = pipeline.calibrate(&dataset)?;
    emit_json(common, &result)?;
    eprintln!(
        "frames used {}/{} (rejected {}, without estimate {})",
        result.frames_used, result.frames_total, result.frames_rejected, result.frames_without_estimate
    );
    if let Some(gt) = &dataset.gt_calibration {
        eprintln!(
            "translation error {:.6} m, rotation error {:.6} deg",
            translation_error(gt, &result.calibration),
            rotation_error(gt, &result.calibration).to_degrees()
        );
    }
    Ok(())
}

fn estimate(cfg: &PipelineConfig, common: &Common, dir: &Path, frame: usize) -> CliResult {
    let (dataset, pipeline) = open(cfg, dir)?;
    if frame >= dataset.frames.len() {
        return Err(Failure::new(
            2,
            format!("frame {frame} out of range: dataset has {} frames", dataset.frames.len()),
        ));
    }
    let est = pipeline.estimate_frame(&dataset, frame)?;
    emit_json(common, &est)?;
    if let Some(reason) = &est.rejection {
        return Err(Failure::new(5, format!("frame {frame} failed the sanity check: {reason}")));
    }
    eprintln!(
        "{} candidates, {} keypoints used",
        est.candidates.len(),
        est.keypoints_used
    );
    Ok(())
}

fn evaluate(cfg: &PipelineConfig, common: &Common, dir: &Path) -> CliResult {
    let (dataset, pipeline) = open(cfg, dir)?;
    let report = evaluate_dataset(&dataset, &pipeline)?;
    let table = report.to_table();
    if let Some(out) = &common.output {
        write_text(&out.join("report.json"), &to_json(&report)?)?;
        write_text(&out.join("report.txt"), &table)?;
        write_text(&out.join("frames.csv"), &report.to_csv())?;
    }
    print!("{table}");
    Ok(())
}
