//! Seeded synthetic datasets stored as JSON lines: a header line followed by
//! one frame per line.

use std::fs;
use std::path::Path;

use egofit_core::body::{forward_kinematics, BodyModelDef, PoseShapeParams};
use egofit_core::camera::{CalibrationFile, FisheyeCamera, Pixel2, Point3};
use egofit_core::toy::make_toy_model_by_label;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::SynthConfig;
use crate::digest::sha256_hex;
use crate::error::{HarnessError, Result};
use crate::par_map;

pub const DATASET_FORMAT: &str = "egofit-dataset/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format: String,
    pub seed: u64,
    pub model: String,
    pub model_digest: String,
    pub camera: CalibrationFile,
    pub camera_digest: String,
    pub config_digest: String,
    pub synth: SynthConfig,
    /// Samples rejected because a joint fell behind the camera.
    pub resampled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Frame {
    pub frame_id: u64,
    pub gt_params: PoseShapeParams,
    pub gt_joints_3d: Vec<Point3>,
    pub gt_joints_2d: Vec<Pixel2>,
    pub noise_sigma: f64,
    pub camera_ref: String,
    /// Joints displaced as outliers, ascending.
    pub outlier_joints: Vec<usize>,
    pub resamples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub frames: Vec<Frame>,
}

pub fn model_digest(model: &BodyModelDef) -> String {
    sha256_hex(model.to_json_string().as_bytes())
}

pub fn camera_digest(camera: &FisheyeCamera) -> String {
    sha256_hex(camera.to_json_string().as_bytes())
}

/// Per-frame generator seed.
pub fn frame_seed(seed: u64, frame_id: u64) -> u64 {
    seed ^ frame_id
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn sample_params(model: &BodyModelDef, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> PoseShapeParams {
    let mut p = PoseShapeParams::zeros(model);
    let s = cfg.pose_scale;
    let mut pose = p.whole_body_pose();
    for x in pose.iter_mut() {
        *x = if s > 0.0 { rng.random_range(-s..=s) } else { 0.0 };
    }
    p.set_whole_body_pose(&pose);
    for b in p.beta.iter_mut() {
        *b = normal(rng) * cfg.shape_scale;
    }
    let xy = cfg.translation_xy;
    let lateral = |rng: &mut ChaCha8Rng| if xy > 0.0 { rng.random_range(-xy..=xy) } else { 0.0 };
    let x = lateral(rng);
    let y = lateral(rng);
    let z = if cfg.depth_max > cfg.depth_min {
        rng.random_range(cfg.depth_min..=cfg.depth_max)
    } else {
        cfg.depth_min
    };
    p.translation = [x, y, z];
    p
}

fn random_direction(rng: &mut ChaCha8Rng) -> Point3 {
    loop {
        let v = Point3::new(normal(rng), normal(rng), normal(rng));
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Samples one frame; draws are repeated while any observed joint lies behind
/// the camera.
pub fn sample_frame(
    frame_id: u64,
    seed: u64,
    cfg: &SynthConfig,
    model: &BodyModelDef,
    camera: &FisheyeCamera,
    camera_ref: &str,
) -> Result<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(seed, frame_id));
    let j = model.joint_count();
    for attempt in 0..cfg.max_attempts {
        let params = sample_params(model, cfg, &mut rng);
        let clean = forward_kinematics(model, &params)?;
        let mut joints: Vec<Point3> = clean
            .iter()
            .map(|p| p + Point3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng)) * cfg.noise_sigma)
            .collect();

        let mut outliers: Vec<usize> = (0..j).filter(|_| rng.random::<f64>() < cfg.outlier_rate).collect();
        let extra = cfg.outliers_per_frame.min(j - outliers.len());
        for _ in 0..extra {
            let free: Vec<usize> = (0..j).filter(|k| !outliers.contains(k)).collect();
            outliers.push(free[rng.random_range(0..free.len())]);
        }
        outliers.sort_unstable();
        for &k in &outliers {
            let dist = if cfg.outlier_max_m > cfg.outlier_min_m {
                rng.random_range(cfg.outlier_min_m..=cfg.outlier_max_m)
            } else {
                cfg.outlier_min_m
            };
            joints[k] += random_direction(&mut rng) * dist;
        }

        if joints.iter().any(|p| !(p.z > 0.0)) {
            continue;
        }
        let pixels: Option<Vec<Pixel2>> = joints.iter().map(|p| camera.project(p).ok()).collect();
        let Some(pixels) = pixels else { continue };
        return Ok(Frame {
            frame_id,
            gt_params: params,
            gt_joints_3d: joints,
            gt_joints_2d: pixels,
            noise_sigma: cfg.noise_sigma,
            camera_ref: camera_ref.to_string(),
            outlier_joints: outliers,
            resamples: attempt,
        });
    }
    Err(HarnessError::JointBehindCamera {
        frame_id,
        attempts: cfg.max_attempts,
    })
}

/// Generates `cfg.num_frames` frames; the output does not depend on `jobs`.
pub fn gen_synthetic(
    seed: u64,
    cfg: &SynthConfig,
    camera: &FisheyeCamera,
    config_digest: &str,
    jobs: Option<usize>,
) -> Result<Dataset> {
    cfg.validate()?;
    let model = make_toy_model_by_label(&cfg.model).map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
    let cam_ref = camera_digest(camera);
    let ids: Vec<u64> = (0..cfg.num_frames as u64).collect();
    let frames = par_map(&ids, jobs, |&id| sample_frame(id, seed, cfg, &model, camera, &cam_ref))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let resampled = frames.iter().map(|f| f.resamples).sum();
    Ok(Dataset {
        header: DatasetHeader {
            format: DATASET_FORMAT.into(),
            seed,
            model: cfg.model.clone(),
            model_digest: model_digest(&model),
            camera: camera.to_file(),
            camera_digest: cam_ref,
            config_digest: config_digest.into(),
            synth: cfg.clone(),
            resampled,
        },
        frames,
    })
}

impl Dataset {
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for f in &self.frames {
            out.push_str(&serde_json::to_string(f).expect("frame serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str, origin: &Path) -> Result<Self> {
        let parse_err = |line: usize, msg: String| HarnessError::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| parse_err(1, "empty dataset".into()))?;
        let header: DatasetHeader = serde_json::from_str(first).map_err(|e| parse_err(1, e.to_string()))?;
        if header.format != DATASET_FORMAT {
            return Err(parse_err(1, format!("unsupported format {:?}", header.format)));
        }
        let frames = lines
            .map(|(n, l)| serde_json::from_str(l).map_err(|e| parse_err(n + 1, e.to_string())))
            .collect::<Result<Vec<Frame>>>()?;
        Ok(Self { header, frames })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()).map_err(|e| HarnessError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_jsonl(&text, path)
    }

    /// Digest of the serialized dataset.
    pub fn digest(&self) -> String {
        sha256_hex(self.to_jsonl().as_bytes())
    }

    /// Rebuilds the model named in the header and checks its digest.
    pub fn model(&self) -> Result<BodyModelDef> {
        let model =
            make_toy_model_by_label(&self.header.model).map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        let found = model_digest(&model);
        if found != self.header.model_digest {
            return Err(HarnessError::DigestMismatch {
                what: "model",
                expected: self.header.model_digest.clone(),
                found,
            });
        }
        Ok(model)
    }

    pub fn camera(&self) -> Result<FisheyeCamera> {
        Ok(FisheyeCamera::from_file(self.header.camera.clone())?)
    }

    pub fn frame(&self, frame_id: u64) -> Result<&Frame> {
        self.frames
            .iter()
            .find(|f| f.frame_id == frame_id)
            .ok_or(HarnessError::FrameNotFound(frame_id))
    }
}
