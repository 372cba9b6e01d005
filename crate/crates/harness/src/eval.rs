//! Procrustes-aligned evaluation of fitted parameters against generator truth.

use std::fmt::Write as _;
use std::str::FromStr;

use egofit_core::body::{forward_kinematics, skin_vertices, BodyModelDef, PoseShapeParams};
use egofit_core::metrics::{pa_mpjpe, pa_mpvpe, select};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{HarnessError, Result};
use crate::fitting::FitResults;

/// Joints entering the metric.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointMask {
    All,
    Body,
    Indices(Vec<usize>),
}

impl FromStr for JointMask {
    type Err = HarnessError;

    /// `all`, `body`, or a comma-separated list of joint indices.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all" => Ok(JointMask::All),
            "body" => Ok(JointMask::Body),
            list => {
                let idx = list
                    .split(',')
                    .map(|t| t.trim().parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| HarnessError::InvalidArgument(format!("bad mask {s:?}")))?;
                if idx.is_empty() {
                    return Err(HarnessError::InvalidArgument("mask is empty".into()));
                }
                Ok(JointMask::Indices(idx))
            }
        }
    }
}

impl JointMask {
    pub fn resolve(&self, model: &BodyModelDef) -> Result<Vec<usize>> {
        let idx = match self {
            JointMask::All => (0..model.joint_count()).collect(),
            JointMask::Body => model.body_joint_indices(),
            JointMask::Indices(v) => {
                let mut v = v.clone();
                v.sort_unstable();
                v.dedup();
                v
            }
        };
        if let Some(&bad) = idx.iter().find(|&&k| k >= model.joint_count()) {
            return Err(HarnessError::InvalidArgument(format!("mask joint {bad} out of range")));
        }
        if idx.is_empty() {
            return Err(HarnessError::InvalidArgument("mask is empty".into()));
        }
        Ok(idx)
    }
}

/// Vertices whose dominant skinning joint is in `joints`.
pub fn masked_vertices(model: &BodyModelDef, joints: &[usize]) -> Vec<usize> {
    (0..model.vertex_count())
        .filter(|&v| {
            let dominant = (0..model.joint_count())
                .max_by(|&a, &b| model.skinning_weight(v, a).total_cmp(&model.skinning_weight(v, b)).then(b.cmp(&a)))
                .expect("model has joints");
            joints.contains(&dominant)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub frame_id: u64,
    pub pa_mpjpe_mm: f64,
    pub pa_mpvpe_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedFrame {
    pub frame_id: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean_pa_mpjpe_mm: Option<f64>,
    pub median_pa_mpjpe_mm: Option<f64>,
    pub mean_pa_mpvpe_mm: Option<f64>,
    pub median_pa_mpvpe_mm: Option<f64>,
    pub count: usize,
    pub skipped: usize,
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub fn aggregate(rows: &[MetricRow], skipped: usize) -> Aggregate {
    let j: Vec<f64> = rows.iter().map(|r| r.pa_mpjpe_mm).collect();
    let v: Vec<f64> = rows.iter().map(|r| r.pa_mpvpe_mm).collect();
    Aggregate {
        mean_pa_mpjpe_mm: mean(&j),
        median_pa_mpjpe_mm: median(&j),
        mean_pa_mpvpe_mm: mean(&v),
        median_pa_mpvpe_mm: median(&v),
        count: rows.len(),
        skipped,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub seed: u64,
    pub config_digest: String,
    pub dataset_digest: String,
    pub model: String,
    pub mask: Vec<usize>,
    pub rows: Vec<MetricRow>,
    pub skipped_frames: Vec<SkippedFrame>,
    pub aggregate: Aggregate,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// `frame_id,pa_mpjpe_mm,pa_mpvpe_mm` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame_id,pa_mpjpe_mm,pa_mpvpe_mm\n");
        for r in &self.rows {
            writeln!(s, "{},{},{}", r.frame_id, r.pa_mpjpe_mm, r.pa_mpvpe_mm).expect("string write");
        }
        s
    }
}

/// PA metrics of one prediction; joints listed as outliers in the frame are
/// left out of the joint metric.
pub fn frame_metrics(
    model: &BodyModelDef,
    gt: &PoseShapeParams,
    pred: &PoseShapeParams,
    joints: &[usize],
    vertices: &[usize],
    outliers: &[usize],
) -> Result<(f64, f64)> {
    let inliers: Vec<usize> = joints.iter().copied().filter(|k| !outliers.contains(k)).collect();
    let gj = forward_kinematics(model, gt)?;
    let pj = forward_kinematics(model, pred)?;
    let mpjpe = pa_mpjpe(&select(&pj, &inliers), &select(&gj, &inliers))?;
    let gv = skin_vertices(model, gt)?;
    let pv = skin_vertices(model, pred)?;
    let mpvpe = pa_mpvpe(&select(&pv, vertices), &select(&gv, vertices))?;
    Ok((mpjpe, mpvpe))
}

/// Evaluates one prediction per frame; an `Err` carries the reason a fit is missing.
pub fn evaluate(
    method: &str,
    dataset: &Dataset,
    predictions: &[(u64, std::result::Result<PoseShapeParams, String>)],
    mask: &JointMask,
    config_digest: &str,
) -> Result<EvalReport> {
    let model = dataset.model()?;
    let joints = mask.resolve(&model)?;
    let vertices = masked_vertices(&model, &joints);
    let mut rows = Vec::new();
    let mut skipped_frames = Vec::new();
    for (frame_id, pred) in predictions {
        let frame = dataset.frame(*frame_id)?;
        let outcome = pred.clone().and_then(|p| {
            frame_metrics(&model, &frame.gt_params, &p, &joints, &vertices, &frame.outlier_joints)
                .map_err(|e| e.to_string())
        });
        match outcome {
            Ok((j, v)) => rows.push(MetricRow {
                frame_id: *frame_id,
                pa_mpjpe_mm: j,
                pa_mpvpe_mm: v,
            }),
            Err(reason) => skipped_frames.push(SkippedFrame {
                frame_id: *frame_id,
                reason,
            }),
        }
    }
    let aggregate = aggregate(&rows, skipped_frames.len());
    Ok(EvalReport {
        method: method.into(),
        seed: dataset.header.seed,
        config_digest: config_digest.into(),
        dataset_digest: dataset.digest(),
        model: dataset.header.model.clone(),
        mask: joints,
        rows,
        skipped_frames,
        aggregate,
    })
}

/// Evaluates a results file against the dataset it was fitted on.
pub fn run_eval(
    results: &FitResults,
    dataset: &Dataset,
    mask: &JointMask,
    method: &str,
    config_digest: &str,
) -> Result<EvalReport> {
    let digest = dataset.digest();
    if results.header.dataset_digest != digest {
        return Err(HarnessError::DigestMismatch {
            what: "dataset",
            expected: results.header.dataset_digest.clone(),
            found: digest,
        });
    }
    let predictions: Vec<_> = results
        .frames
        .iter()
        .map(|f| {
            let p = match (&f.fit, &f.error) {
                (Some(s), _) => Ok(s.params.clone()),
                (None, Some(e)) => Err(format!("fit failed: {e}")),
                (None, None) => Err("fit failed".to_string()),
            };
            (f.frame_id, p)
        })
        .collect();
    evaluate(method, dataset, &predictions, mask, config_digest)
}
