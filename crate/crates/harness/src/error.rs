use std::io;
use std::path::PathBuf;

use egofit_core::body::BodyError;
use egofit_core::camera::CameraError;
use egofit_core::fitter::FitError;
use egofit_core::image::ImageError;
use egofit_core::losses::LossError;
use egofit_core::metrics::MetricsError;
use egofit_core::undistort::UndistortError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("frame {0} not found")]
    FrameNotFound(u64),
    #[error("could not sample frame {frame_id} in front of the camera after {attempts} attempts")]
    JointBehindCamera { frame_id: u64, attempts: usize },
    #[error("all {0} frames failed")]
    TotalFailure(usize),
    #[error("{what} digest mismatch: expected {expected}, found {found}")]
    DigestMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },
    #[error(transparent)]
    Body(#[from] BodyError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Undistort(#[from] UndistortError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

impl HarnessError {
    /// `2` for invalid arguments or configuration, `1` otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::InvalidArgument(_) | HarnessError::InvalidConfig(_) => 2,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
