//! Regression stand-in versus optimization fit on synthetic frames.

use egofit_core::body::{forward_kinematics, PoseShapeParams};
use egofit_core::camera::{FisheyeCamera, Point3};
use egofit_core::fitter::{batch_fit, FitConfig};
use egofit_core::metrics::{pa_mpjpe, select};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{SynthConfig, Table3Config};
use crate::dataset::{frame_seed, gen_synthetic};
use crate::error::{HarnessError, Result};
use crate::eval::{mean, median};

/// Published numbers quoted for orientation only.
pub const REFERENCE_REGRESSION_MM: f64 = 350.78;
pub const REFERENCE_OPTIMIZATION_MM: f64 = 77.44;

const PERTURB_SALT: u64 = 0x5eed_7ab1e3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceContext {
    pub dataset: String,
    pub regression_mm: f64,
    pub optimization_mm: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table3Row {
    pub frame_id: u64,
    pub regression_pa_mpjpe_mm: f64,
    pub optimization_pa_mpjpe_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub mean_pa_mpjpe_mm: Option<f64>,
    pub median_pa_mpjpe_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table3Report {
    pub reference: ReferenceContext,
    pub seed: u64,
    pub num_frames: usize,
    pub perturbation_rad: f64,
    pub config_digest: String,
    pub regression: MethodSummary,
    pub optimization: MethodSummary,
    /// `1 - optimization / regression` on the means.
    pub relative_reduction: Option<f64>,
    /// `regression / optimization` on the means.
    pub improvement_factor: Option<f64>,
    pub rows: Vec<Table3Row>,
    pub skipped: Vec<u64>,
}

impl Table3Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Rotates every articulated joint by `magnitude` radians about a random axis,
/// composed additively in axis-angle space.
pub fn regression_stand_in(
    gt: &PoseShapeParams,
    magnitude: f64,
    seed: u64,
    frame_id: u64,
) -> PoseShapeParams {
    let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(seed, frame_id) ^ PERTURB_SALT);
    let mut out = gt.clone();
    let mut pose = out.whole_body_pose();
    for chunk in pose.chunks_mut(3) {
        let axis = loop {
            let v = Point3::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            );
            if v.norm() > 1e-9 {
                break v.normalize();
            }
        };
        for (c, a) in chunk.iter_mut().zip(axis.iter()) {
            *c += magnitude * a;
        }
    }
    out.set_whole_body_pose(&pose);
    out
}

pub fn run_table3_analogue(
    seed: u64,
    table: &Table3Config,
    synth: &SynthConfig,
    fit: &FitConfig,
    camera: &FisheyeCamera,
    config_digest: &str,
    jobs: Option<usize>,
) -> Result<Table3Report> {
    if table.num_frames < 32 {
        return Err(HarnessError::InvalidArgument(format!(
            "table3 needs at least 32 frames, got {}",
            table.num_frames
        )));
    }
    let synth = SynthConfig {
        num_frames: table.num_frames,
        ..synth.clone()
    };
    let dataset = gen_synthetic(seed, &synth, camera, config_digest, jobs)?;
    let model = dataset.model()?;
    let joints = fit
        .joints(&model)
        .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
    let targets: Vec<_> = dataset.frames.iter().map(|f| f.gt_joints_3d.clone()).collect();
    let fits = batch_fit(&model, &targets, fit, jobs);

    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (frame, fitted) in dataset.frames.iter().zip(fits) {
        let outcome = (|| -> Result<Table3Row> {
            let fitted = fitted?;
            let gt = select(&forward_kinematics(&model, &frame.gt_params)?, &joints);
            let stand_in = regression_stand_in(&frame.gt_params, table.perturbation_rad, seed, frame.frame_id);
            let a = select(&forward_kinematics(&model, &stand_in)?, &joints);
            let b = select(&forward_kinematics(&model, &fitted.params)?, &joints);
            Ok(Table3Row {
                frame_id: frame.frame_id,
                regression_pa_mpjpe_mm: pa_mpjpe(&a, &gt)?,
                optimization_pa_mpjpe_mm: pa_mpjpe(&b, &gt)?,
            })
        })();
        match outcome {
            Ok(r) => rows.push(r),
            Err(_) => skipped.push(frame.frame_id),
        }
    }
    if rows.is_empty() {
        return Err(HarnessError::TotalFailure(dataset.frames.len()));
    }
    let a: Vec<f64> = rows.iter().map(|r| r.regression_pa_mpjpe_mm).collect();
    let b: Vec<f64> = rows.iter().map(|r| r.optimization_pa_mpjpe_mm).collect();
    let (ma, mb) = (mean(&a), mean(&b));
    let (relative_reduction, improvement_factor) = match (ma, mb) {
        (Some(x), Some(y)) if x > 0.0 => (Some(1.0 - y / x), (y > 0.0).then(|| x / y)),
        _ => (None, None),
    };
    Ok(Table3Report {
        reference: ReferenceContext {
            dataset: "EgoPW".into(),
            regression_mm: REFERENCE_REGRESSION_MM,
            optimization_mm: REFERENCE_OPTIMIZATION_MM,
            note: "published values for context, not reproduced here".into(),
        },
        seed,
        num_frames: table.num_frames,
        perturbation_rad: table.perturbation_rad,
        config_digest: config_digest.into(),
        regression: MethodSummary {
            method: "regression stand-in".into(),
            mean_pa_mpjpe_mm: ma,
            median_pa_mpjpe_mm: median(&a),
        },
        optimization: MethodSummary {
            method: "optimization fit".into(),
            mean_pa_mpjpe_mm: mb,
            median_pa_mpjpe_mm: median(&b),
        },
        relative_reduction,
        improvement_factor,
        rows,
        skipped,
    })
}
