//! Composite training objective: parameter losses, 3D and fisheye-2D joint
//! losses, and a one-step-denoiser pose prior, with analytic gradients with
//! respect to [`PoseShapeParams`].

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::body::{pose_skeleton, skeleton_vjp, BodyError, BodyModelDef, PoseShapeParams};
use crate::camera::{CameraError, FisheyeCamera, Pixel2, Point3};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("shape mismatch: {0} vs {1} joints")]
    ShapeMismatch(usize, usize),
    #[error("mask is empty")]
    EmptyMask,
    #[error("mask index {0} out of range")]
    MaskOutOfRange(usize),
    #[error("projection of joint {joint} failed: {source}")]
    Projection {
        joint: usize,
        #[source]
        source: CameraError,
    },
    #[error("denoiser failed: {0}")]
    DenoiserFailure(#[from] DenoiserError),
    #[error("progress must lie in [0, 1], got {0}")]
    InvalidProgress(f64),
    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
    #[error(transparent)]
    Body(#[from] BodyError),
}

#[derive(Debug, Error)]
#[error("{0}")]
pub struct DenoiserError(pub String);

fn check_len(a: usize, b: usize) -> Result<(), LossError> {
    if a == b {
        Ok(())
    } else {
        Err(LossError::LengthMismatch(a, b))
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `|pred - target|^2` over a pose block.
pub fn loss_pose(pred: &[f64], target: &[f64]) -> Result<f64, LossError> {
    check_len(pred.len(), target.len())?;
    Ok(sq_dist(pred, target))
}

/// `|pred_beta - target_beta|^2`.
pub fn loss_shape(pred: &[f64], target: &[f64]) -> Result<f64, LossError> {
    check_len(pred.len(), target.len())?;
    Ok(sq_dist(pred, target))
}

fn resolve_mask(mask: Option<&[usize]>, n: usize) -> Result<Vec<usize>, LossError> {
    match mask {
        None => Ok((0..n).collect()),
        Some([]) => Err(LossError::EmptyMask),
        Some(m) => {
            if let Some(&k) = m.iter().find(|&&k| k >= n) {
                return Err(LossError::MaskOutOfRange(k));
            }
            Ok(m.to_vec())
        }
    }
}

/// Squared 3D joint error over the mask, with the gradient per joint.
pub fn loss_3d_with_gradient(
    pred: &[Point3],
    gt: &[Point3],
    mask: Option<&[usize]>,
) -> Result<(f64, Vec<Vector3<f64>>), LossError> {
    if pred.len() != gt.len() {
        return Err(LossError::ShapeMismatch(pred.len(), gt.len()));
    }
    let mask = resolve_mask(mask, pred.len())?;
    let mut grad = vec![Vector3::zeros(); pred.len()];
    let mut total = 0.0;
    for &k in &mask {
        let d = pred[k] - gt[k];
        total += d.norm_squared();
        grad[k] += d * 2.0;
    }
    Ok((total, grad))
}

pub fn loss_3d(pred: &[Point3], gt: &[Point3], mask: Option<&[usize]>) -> Result<f64, LossError> {
    Ok(loss_3d_with_gradient(pred, gt, mask)?.0)
}

/// Squared fisheye reprojection error of `pred + t` against `gt_px`, with the
/// gradient with respect to each translated joint.
pub fn loss_2d_with_gradient(
    pred: &[Point3],
    t: &Vector3<f64>,
    gt_px: &[Pixel2],
    camera: &FisheyeCamera,
    mask: Option<&[usize]>,
) -> Result<(f64, Vec<Vector3<f64>>), LossError> {
    if pred.len() != gt_px.len() {
        return Err(LossError::ShapeMismatch(pred.len(), gt_px.len()));
    }
    let mask = resolve_mask(mask, pred.len())?;
    let mut grad = vec![Vector3::zeros(); pred.len()];
    let mut total = 0.0;
    for &k in &mask {
        if !(gt_px[k].x.is_finite() && gt_px[k].y.is_finite()) {
            return Err(LossError::Projection {
                joint: k,
                source: CameraError::NonFiniteInput,
            });
        }
        let (px, jac) = camera
            .project_with_jacobian(&(pred[k] + t))
            .map_err(|source| LossError::Projection { joint: k, source })?;
        let r = px - gt_px[k];
        total += r.norm_squared();
        grad[k] += jac.transpose() * r * 2.0;
    }
    Ok((total, grad))
}

pub fn loss_2d(
    pred: &[Point3],
    t: &Vector3<f64>,
    gt_px: &[Pixel2],
    camera: &FisheyeCamera,
    mask: Option<&[usize]>,
) -> Result<f64, LossError> {
    Ok(loss_2d_with_gradient(pred, t, gt_px, camera, mask)?.0)
}

/// Cumulative signal level `alpha_bar(tau)` of a variance-preserving kernel.
pub trait NoiseSchedule {
    fn alpha_bar(&self, tau: f64) -> f64;
}

/// `alpha_bar(tau) = cos^2(tau pi / 2)`, clipped to `[min_alpha_bar, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub min_alpha_bar: f64,
}

impl Default for CosineSchedule {
    fn default() -> Self {
        Self { min_alpha_bar: 1e-4 }
    }
}

impl NoiseSchedule for CosineSchedule {
    fn alpha_bar(&self, tau: f64) -> f64 {
        let c = (tau * FRAC_PI_2).cos();
        (c * c).clamp(self.min_alpha_bar, 1.0)
    }
}

/// Variance-preserving perturbation `sqrt(ab) theta + sqrt(1 - ab) noise`.
pub fn perturb(
    theta: &[f64],
    tau: f64,
    schedule: &dyn NoiseSchedule,
    noise: &[f64],
) -> Result<Vec<f64>, LossError> {
    check_len(theta.len(), noise.len())?;
    let ab = schedule.alpha_bar(tau);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(theta.iter().zip(noise).map(|(t, e)| a * t + b * e).collect())
}

/// One-step pose denoiser `theta_noisy -> theta_0(tau)`.
pub trait Denoiser {
    fn denoise(&self, noisy: &[f64], tau: f64) -> Result<Vec<f64>, DenoiserError>;

    /// Vector-Jacobian product `J^T cotangent` of [`denoise`](Self::denoise) at `noisy`.
    fn denoise_vjp(&self, noisy: &[f64], tau: f64, cotangent: &[f64]) -> Result<Vec<f64>, DenoiserError>;
}

/// Returns its input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn denoise(&self, noisy: &[f64], _tau: f64) -> Result<Vec<f64>, DenoiserError> {
        Ok(noisy.to_vec())
    }

    fn denoise_vjp(&self, _noisy: &[f64], _tau: f64, cotangent: &[f64]) -> Result<Vec<f64>, DenoiserError> {
        Ok(cotangent.to_vec())
    }
}

/// Exact posterior mean under a unit-covariance Gaussian prior `N(mean, I)` and
/// the variance-preserving kernel: `sqrt(ab) y + (1 - ab) mean`.
#[derive(Debug, Clone)]
pub struct GaussianDenoiser<S> {
    prior_mean: Vec<f64>,
    schedule: S,
}

pub fn gaussian_reference_denoiser<S: NoiseSchedule>(prior_mean: Vec<f64>, schedule: S) -> GaussianDenoiser<S> {
    GaussianDenoiser { prior_mean, schedule }
}

impl<S: NoiseSchedule> Denoiser for GaussianDenoiser<S> {
    fn denoise(&self, noisy: &[f64], tau: f64) -> Result<Vec<f64>, DenoiserError> {
        if noisy.len() != self.prior_mean.len() {
            return Err(DenoiserError(format!(
                "input has {} values, prior has {}",
                noisy.len(),
                self.prior_mean.len()
            )));
        }
        let ab = self.schedule.alpha_bar(tau);
        let a = ab.sqrt();
        let b = 1.0 - ab;
        Ok(noisy.iter().zip(&self.prior_mean).map(|(y, m)| a * y + b * m).collect())
    }

    fn denoise_vjp(&self, noisy: &[f64], tau: f64, cotangent: &[f64]) -> Result<Vec<f64>, DenoiserError> {
        if noisy.len() != cotangent.len() {
            return Err(DenoiserError("cotangent length mismatch".into()));
        }
        let a = self.schedule.alpha_bar(tau).sqrt();
        Ok(cotangent.iter().map(|c| a * c).collect())
    }
}

/// Prior loss `|theta - D(perturb(theta))|^2` and its gradient in `theta`.
pub fn loss_prior_with_gradient(
    theta: &[f64],
    tau: f64,
    schedule: &dyn NoiseSchedule,
    denoiser: &dyn Denoiser,
    noise: &[f64],
) -> Result<(f64, Vec<f64>), LossError> {
    let noisy = perturb(theta, tau, schedule, noise)?;
    let denoised = denoiser.denoise(&noisy, tau)?;
    if denoised.len() != theta.len() || !denoised.iter().all(|v| v.is_finite()) {
        return Err(LossError::DenoiserFailure(DenoiserError(
            "denoiser returned a malformed estimate".into(),
        )));
    }
    let residual: Vec<f64> = theta.iter().zip(&denoised).map(|(t, d)| t - d).collect();
    let value = residual.iter().map(|r| r * r).sum();
    let pulled = denoiser.denoise_vjp(&noisy, tau, &residual)?;
    let a = schedule.alpha_bar(tau).sqrt();
    let grad = residual.iter().zip(&pulled).map(|(r, p)| 2.0 * r - 2.0 * a * p).collect();
    Ok((value, grad))
}

pub fn loss_prior(
    theta: &[f64],
    tau: f64,
    schedule: &dyn NoiseSchedule,
    denoiser: &dyn Denoiser,
    noise: &[f64],
) -> Result<f64, LossError> {
    Ok(loss_prior_with_gradient(theta, tau, schedule, denoiser, noise)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PriorDecay {
    #[default]
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_pose: f64,
    pub lambda_shape: f64,
    pub lambda_3d: f64,
    pub lambda_2d: f64,
    pub prior_start: f64,
    pub prior_end: f64,
    pub schedule: PriorDecay,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_pose: 10.0,
            lambda_shape: 1e-2,
            lambda_3d: 1e2,
            lambda_2d: 1.0,
            prior_start: 1e-1,
            prior_end: 1e-2,
            schedule: PriorDecay::Cosine,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let all = [
            self.lambda_pose,
            self.lambda_shape,
            self.lambda_3d,
            self.lambda_2d,
            self.prior_start,
            self.prior_end,
        ];
        if all.iter().any(|w| !(*w >= 0.0)) {
            return Err(LossError::InvalidWeights("weights must be non-negative".into()));
        }
        if self.prior_start < self.prior_end {
            return Err(LossError::InvalidWeights("prior_start must be >= prior_end".into()));
        }
        Ok(())
    }

    /// Half-cosine decay from `prior_start` at progress 0 to `prior_end` at 1.
    pub fn lambda_prior(&self, progress: f64) -> f64 {
        match self.schedule {
            PriorDecay::Cosine => {
                let w = 0.5 * (1.0 + (PI * progress).cos());
                self.prior_start * w + self.prior_end * (1.0 - w)
            }
        }
    }
}

/// Inputs of the prior term.
pub struct PriorInputs<'a> {
    pub tau: f64,
    pub noise: &'a [f64],
    pub schedule: &'a dyn NoiseSchedule,
    pub denoiser: &'a dyn Denoiser,
}

/// Everything [`total_loss`] needs for one sample.
pub struct LossInputs<'a> {
    pub model: &'a BodyModelDef,
    pub pred: &'a PoseShapeParams,
    pub target_body_pose: &'a [f64],
    pub target_beta: &'a [f64],
    /// Camera-frame ground-truth joints.
    pub gt_joints_3d: &'a [Point3],
    pub gt_joints_2d: &'a [Pixel2],
    pub camera: &'a FisheyeCamera,
    pub mask: Option<&'a [usize]>,
    pub prior: PriorInputs<'a>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTerm {
    pub name: String,
    pub value: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub progress: f64,
    pub terms: Vec<LossTerm>,
}

impl LossBreakdown {
    pub fn term(&self, name: &str) -> Option<&LossTerm> {
        self.terms.iter().find(|t| t.name == name)
    }
}

/// Weighted sum of all terms with the scheduled prior weight, plus the gradient
/// with respect to every block of `pred`.
///
/// Predicted joints come from forward kinematics including the predicted
/// translation; the 2D term projects the same camera-frame joints.
pub fn total_loss_with_gradient(
    inputs: &LossInputs<'_>,
    weights: &LossWeights,
    progress: f64,
) -> Result<(LossBreakdown, PoseShapeParams), LossError> {
    if !(0.0..=1.0).contains(&progress) {
        return Err(LossError::InvalidProgress(progress));
    }
    weights.validate()?;
    let model = inputs.model;
    let pred = inputs.pred;
    let posed = pose_skeleton(model, pred)?;
    let t = pred.translation_vec();

    let l_pose = loss_pose(&pred.theta_body, inputs.target_body_pose)?;
    let l_shape = loss_shape(&pred.beta, inputs.target_beta)?;
    let (l_3d, g_3d) = loss_3d_with_gradient(&posed.joints, inputs.gt_joints_3d, inputs.mask)?;
    let model_frame: Vec<Point3> = posed.joints.iter().map(|p| p - t).collect();
    let (l_2d, g_2d) = loss_2d_with_gradient(&model_frame, &t, inputs.gt_joints_2d, inputs.camera, inputs.mask)?;
    let pose = pred.whole_body_pose();
    let pr = &inputs.prior;
    let (l_prior, g_prior) = loss_prior_with_gradient(&pose, pr.tau, pr.schedule, pr.denoiser, pr.noise)?;

    let lp = weights.lambda_prior(progress);
    let terms = vec![
        LossTerm { name: "pose".into(), value: l_pose, weight: weights.lambda_pose },
        LossTerm { name: "shape".into(), value: l_shape, weight: weights.lambda_shape },
        LossTerm { name: "joints_3d".into(), value: l_3d, weight: weights.lambda_3d },
        LossTerm { name: "joints_2d".into(), value: l_2d, weight: weights.lambda_2d },
        LossTerm { name: "prior".into(), value: l_prior, weight: lp },
    ];
    let total = terms.iter().map(|t| t.weight * t.value).sum();

    let joint_grads: Vec<Vector3<f64>> = g_3d
        .iter()
        .zip(&g_2d)
        .map(|(a, b)| a * weights.lambda_3d + b * weights.lambda_2d)
        .collect();
    let mut grad = skeleton_vjp(model, &posed, &joint_grads);
    for ((g, p), q) in grad.theta_body.iter_mut().zip(&pred.theta_body).zip(inputs.target_body_pose) {
        *g += weights.lambda_pose * 2.0 * (p - q);
    }
    for ((g, p), q) in grad.beta.iter_mut().zip(&pred.beta).zip(inputs.target_beta) {
        *g += weights.lambda_shape * 2.0 * (p - q);
    }
    let mut prior_grad = pred.clone();
    prior_grad.set_whole_body_pose(&g_prior.iter().map(|g| g * lp).collect::<Vec<_>>());
    prior_grad.beta.iter_mut().for_each(|b| *b = 0.0);
    prior_grad.translation = [0.0; 3];
    grad.add_scaled(&prior_grad, 1.0);

    Ok((LossBreakdown { total, progress, terms }, grad))
}

pub fn total_loss(inputs: &LossInputs<'_>, weights: &LossWeights, progress: f64) -> Result<LossBreakdown, LossError> {
    Ok(total_loss_with_gradient(inputs, weights, progress)?.0)
}
