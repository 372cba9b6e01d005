//! Egocentric fisheye body-fitting toolkit: camera model, tangent-plane
//! undistortion, toy articulated body models, parametric fitting, training
//! losses and Procrustes-aligned metrics.

pub mod adam;
pub mod body;
pub mod camera;
pub mod fitter;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod rotation;
pub mod toy;
pub mod undistort;

pub use body::{BodyModelDef, PoseShapeParams};
pub use camera::FisheyeCamera;
