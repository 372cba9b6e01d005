//! Batch pseudo-ground-truth fitting of a dataset.

use std::fs;
use std::path::Path;

use egofit_core::body::PoseShapeParams;
use egofit_core::fitter::{batch_fit, FitConfig};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{HarnessError, Result};

pub const RESULTS_FORMAT: &str = "egofit-results/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultsHeader {
    pub format: String,
    pub dataset_digest: String,
    pub model: String,
    pub seed: u64,
    pub config_digest: String,
    pub fit: FitConfig,
    pub succeeded: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSummary {
    pub params: PoseShapeParams,
    pub energy_total: f64,
    pub energy_data: f64,
    pub energy_pose_reg: f64,
    pub energy_shape_reg: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameResult {
    pub frame_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResults {
    pub header: ResultsHeader,
    pub frames: Vec<FrameResult>,
}

/// Fits every frame of `dataset`. Per-frame failures are recorded, not raised.
pub fn run_fit(dataset: &Dataset, config: &FitConfig, config_digest: &str, jobs: Option<usize>) -> Result<FitResults> {
    config
        .validate()
        .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
    let model = dataset.model()?;
    let targets: Vec<_> = dataset.frames.iter().map(|f| f.gt_joints_3d.clone()).collect();
    let fits = batch_fit(&model, &targets, config, jobs);
    let frames: Vec<FrameResult> = dataset
        .frames
        .iter()
        .zip(fits)
        .map(|(f, r)| match r {
            Ok(r) => FrameResult {
                frame_id: f.frame_id,
                fit: Some(FitSummary {
                    params: r.params,
                    energy_total: r.energy_total,
                    energy_data: r.energy_data,
                    energy_pose_reg: r.energy_pose_reg,
                    energy_shape_reg: r.energy_shape_reg,
                    iterations: r.iterations,
                    converged: r.converged,
                }),
                error: None,
            },
            Err(e) => FrameResult {
                frame_id: f.frame_id,
                fit: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let succeeded = frames.iter().filter(|f| f.fit.is_some()).count();
    Ok(FitResults {
        header: ResultsHeader {
            format: RESULTS_FORMAT.into(),
            dataset_digest: dataset.digest(),
            model: dataset.header.model.clone(),
            seed: dataset.header.seed,
            config_digest: config_digest.into(),
            fit: config.clone(),
            succeeded,
            failed: frames.len() - succeeded,
        },
        frames,
    })
}

impl FitResults {
    pub fn all_failed(&self) -> bool {
        self.header.succeeded == 0
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for f in &self.frames {
            out.push_str(&serde_json::to_string(f).expect("result serializes"));
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
        let (_, first) = lines.next().ok_or_else(|| parse_err(1, "empty results file".into()))?;
        let header: ResultsHeader = serde_json::from_str(first).map_err(|e| parse_err(1, e.to_string()))?;
        if header.format != RESULTS_FORMAT {
            return Err(parse_err(1, format!("unsupported format {:?}", header.format)));
        }
        let frames = lines
            .map(|(n, l)| serde_json::from_str(l).map_err(|e| parse_err(n + 1, e.to_string())))
            .collect::<Result<Vec<FrameResult>>>()?;
        Ok(Self { header, frames })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()).map_err(|e| HarnessError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_jsonl(&text, path)
    }
}
