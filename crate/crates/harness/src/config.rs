//! Run configuration: one JSON file, every section optional.

use std::fs;
use std::path::Path;

use egofit_core::fitter::FitConfig;
use egofit_core::losses::LossWeights;
use egofit_core::undistort::PatchGridConfig;
use serde::{Deserialize, Serialize};

use crate::digest::json_digest;
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub model: String,
    pub num_frames: usize,
    /// Bound of each axis-angle component, radians.
    pub pose_scale: f64,
    /// Standard deviation of each shape coefficient.
    pub shape_scale: f64,
    /// Isotropic joint noise, metres.
    pub noise_sigma: f64,
    /// Per-joint outlier probability.
    pub outlier_rate: f64,
    /// Joints displaced in every frame on top of `outlier_rate`.
    pub outliers_per_frame: usize,
    pub outlier_min_m: f64,
    pub outlier_max_m: f64,
    /// Lateral translation bound, metres.
    pub translation_xy: f64,
    pub depth_min: f64,
    pub depth_max: f64,
    pub max_attempts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            model: "body16".into(),
            num_frames: 64,
            pose_scale: 0.5,
            shape_scale: 1.0,
            noise_sigma: 0.0,
            outlier_rate: 0.0,
            outliers_per_frame: 0,
            outlier_min_m: 0.5,
            outlier_max_m: 1.5,
            translation_xy: 0.3,
            depth_min: 2.0,
            depth_max: 3.0,
            max_attempts: 100,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::InvalidConfig(m.to_string()));
        if self.num_frames < 1 {
            return bad("num_frames must be at least 1");
        }
        if !(self.pose_scale >= 0.0) || !(self.shape_scale >= 0.0) || !(self.noise_sigma >= 0.0) {
            return bad("pose_scale, shape_scale and noise_sigma must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.outlier_rate) {
            return bad("outlier_rate must lie in [0, 1]");
        }
        if !(self.outlier_min_m > 0.0 && self.outlier_min_m <= self.outlier_max_m) {
            return bad("outlier range must satisfy 0 < min <= max");
        }
        if !(self.translation_xy >= 0.0 && self.depth_min > 0.0 && self.depth_min <= self.depth_max) {
            return bad("translation bounds must place the body in front of the camera");
        }
        if self.max_attempts < 1 {
            return bad("max_attempts must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Table3Config {
    pub num_frames: usize,
    /// Magnitude of the per-joint rotation added to the generator pose.
    pub perturbation_rad: f64,
}

impl Default for Table3Config {
    fn default() -> Self {
        Self {
            num_frames: 64,
            perturbation_rad: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    /// Training progress used for the prior weight.
    pub progress: f64,
    pub pose_jitter: f64,
    pub shape_jitter: f64,
    pub translation_jitter: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            progress: 0.0,
            pose_jitter: 0.05,
            shape_jitter: 0.1,
            translation_jitter: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub fit: FitConfig,
    pub weights: LossWeights,
    pub undistort: PatchGridConfig,
    pub table3: Table3Config,
    pub demo: DemoConfig,
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HarnessError::InvalidConfig(e.to_string()))
    }

    /// Reads `path`, or returns the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| HarnessError::InvalidConfig(format!("{}: {e}", p.display())))?;
                Self::from_json_str(&text)
                    .map_err(|e| HarnessError::InvalidConfig(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.fit
            .validate()
            .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        self.weights
            .validate()
            .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        self.undistort
            .validate()
            .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        if !(self.table3.perturbation_rad >= 0.0) {
            return Err(HarnessError::InvalidConfig("perturbation_rad must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.demo.progress) {
            return Err(HarnessError::InvalidConfig("demo.progress must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        json_digest(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c = RunConfig::from_json_str(r#"{"synth": {"noise_sigma": 0.005}}"#).unwrap();
        assert_eq!(c.synth.noise_sigma, 0.005);
        assert_eq!(c.synth.num_frames, 64);
        assert_eq!(c.fit, FitConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json_str(r#"{"synth": {"frames": 3}}"#).is_err());
        assert!(RunConfig::from_json_str(r#"{"other": 1}"#).is_err());
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.synth.pose_scale = 0.6;
        assert_ne!(a.digest(), b.digest());
    }
}
