use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use egofit_core::camera::{load_calibration, FisheyeCamera};
use egofit_harness::config::RunConfig;
use egofit_harness::dataset::{gen_synthetic, Dataset};
use egofit_harness::demo::run_losses_demo;
use egofit_harness::eval::{run_eval, JointMask};
use egofit_harness::fitting::{run_fit, FitResults};
use egofit_harness::table3::run_table3_analogue;
use egofit_harness::undistort_cmd::run_undistort;
use egofit_harness::{HarnessError, Result};

#[derive(Debug, Parser)]
#[command(name = "egofit", version, about = "Fisheye body-fitting experiments on toy models")]
struct Cli {
    /// JSON run configuration; missing sections keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for frame-parallel stages.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a seeded synthetic dataset (JSON lines).
    GenSynthetic {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        pose_scale: Option<f64>,
        #[arg(long)]
        shape_scale: Option<f64>,
        #[arg(long)]
        noise_sigma: Option<f64>,
        #[arg(long)]
        outlier_rate: Option<f64>,
        #[arg(long)]
        outliers_per_frame: Option<usize>,
        /// `body16` or `wholebody22`.
        #[arg(long)]
        model: Option<String>,
        /// Calibration JSON; the 256x256 reference camera when omitted.
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit every frame of a dataset.
    Fit {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate fitted parameters with PA-MPJPE and PA-MPVPE.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        results: PathBuf,
        /// JSON report path; per-frame rows go next to it as CSV.
        #[arg(long)]
        out: PathBuf,
        /// `all`, `body`, or comma-separated joint indices.
        #[arg(long, default_value = "body")]
        mask: String,
        #[arg(long, default_value = "optimization fit")]
        method: String,
    },
    /// Regression stand-in versus optimization fit.
    Table3 {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        perturbation: Option<f64>,
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Resample a fisheye image into tangent-plane patches.
    Undistort {
        /// PGM or PPM input.
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Drop this many patch columns on each side.
        #[arg(long)]
        crop: Option<usize>,
        /// Output prefix; writes `<out>.pgm|ppm` and `<out>.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Loss breakdown for one frame.
    LossesDemo {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame_id: u64,
        /// Noise level; drawn from the seeded sampler when omitted.
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        progress: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        zero_noise: bool,
        /// Report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn camera(path: Option<&Path>) -> Result<FisheyeCamera> {
    match path {
        Some(p) => Ok(load_calibration(p)?),
        None => Ok(FisheyeCamera::reference_256()),
    }
}

fn csv_path(json: &Path) -> PathBuf {
    json.with_extension("csv")
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    let jobs = cli.jobs;
    if jobs == Some(0) {
        return Err(HarnessError::InvalidArgument("--jobs must be at least 1".into()));
    }
    match cli.command {
        Command::GenSynthetic {
            seed,
            frames,
            pose_scale,
            shape_scale,
            noise_sigma,
            outlier_rate,
            outliers_per_frame,
            model,
            calibration,
            out,
        } => {
            let s = &mut cfg.synth;
            frames.inspect(|v| s.num_frames = *v);
            pose_scale.inspect(|v| s.pose_scale = *v);
            shape_scale.inspect(|v| s.shape_scale = *v);
            noise_sigma.inspect(|v| s.noise_sigma = *v);
            outlier_rate.inspect(|v| s.outlier_rate = *v);
            outliers_per_frame.inspect(|v| s.outliers_per_frame = *v);
            if let Some(m) = model {
                s.model = m;
            }
            cfg.validate()?;
            let cam = camera(calibration.as_deref())?;
            let dataset = gen_synthetic(seed, &cfg.synth, &cam, &cfg.digest(), jobs)?;
            dataset.write(&out)?;
            eprintln!(
                "wrote {} frames to {} ({} resampled)",
                dataset.frames.len(),
                out.display(),
                dataset.header.resampled
            );
        }
        Command::Fit { dataset, out } => {
            cfg.validate()?;
            let data = Dataset::read(&dataset)?;
            let results = run_fit(&data, &cfg.fit, &cfg.digest(), jobs)?;
            results.write(&out)?;
            eprintln!(
                "fitted {} frames, {} failed",
                results.header.succeeded, results.header.failed
            );
            if results.all_failed() {
                return Err(HarnessError::TotalFailure(results.frames.len()));
            }
        }
        Command::Eval {
            dataset,
            results,
            out,
            mask,
            method,
        } => {
            cfg.validate()?;
            let mask: JointMask = mask.parse()?;
            let data = Dataset::read(&dataset)?;
            let fits = FitResults::read(&results)?;
            let report = run_eval(&fits, &data, &mask, &method, &cfg.digest())?;
            write_text(&out, &report.to_json())?;
            write_text(&csv_path(&out), &report.to_csv())?;
            if let Some(m) = report.aggregate.mean_pa_mpjpe_mm {
                eprintln!("mean PA-MPJPE {m:.3} mm over {} frames", report.aggregate.count);
            }
            if report.rows.is_empty() {
                return Err(HarnessError::TotalFailure(report.skipped_frames.len()));
            }
        }
        Command::Table3 {
            seed,
            frames,
            perturbation,
            calibration,
            out,
        } => {
            frames.inspect(|v| cfg.table3.num_frames = *v);
            perturbation.inspect(|v| cfg.table3.perturbation_rad = *v);
            cfg.validate()?;
            let cam = camera(calibration.as_deref())?;
            let report = run_table3_analogue(seed, &cfg.table3, &cfg.synth, &cfg.fit, &cam, &cfg.digest(), jobs)?;
            write_text(&out, &report.to_json())?;
            eprintln!(
                "regression {:.2} mm, optimization {:.2} mm",
                report.regression.mean_pa_mpjpe_mm.unwrap_or(f64::NAN),
                report.optimization.mean_pa_mpjpe_mm.unwrap_or(f64::NAN)
            );
        }
        Command::Undistort {
            image,
            calibration,
            crop,
            out,
        } => {
            cfg.validate()?;
            let cam = camera(calibration.as_deref())?;
            let outputs = run_undistort(&image, &cam, &cfg.undistort, crop, &out)?;
            eprintln!(
                "wrote {} patches to {} and {}",
                outputs.patch_count,
                outputs.mosaic.display(),
                outputs.sidecar.display()
            );
        }
        Command::LossesDemo {
            dataset,
            frame_id,
            tau,
            progress,
            seed,
            zero_noise,
            out,
        } => {
            progress.inspect(|v| cfg.demo.progress = *v);
            cfg.validate()?;
            let data = Dataset::read(&dataset)?;
            let report = run_losses_demo(
                &data,
                frame_id,
                &cfg.weights,
                &cfg.demo,
                tau,
                seed,
                zero_noise,
                &cfg.digest(),
            )?;
            match out {
                Some(p) => write_text(&p, &report.to_json())?,
                None => print!("{}", report.to_json()),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
