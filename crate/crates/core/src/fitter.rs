//! Pseudo-ground-truth fitting of body pose and shape to 3D joints.
//!
//! Minimizes
//!
//! ```text
//! E = sum_{i in J} gm(|J_i - J*_i|) + lambda_theta |theta_body|^2 + lambda_beta |beta|^2
//! ```
//!
//! over body pose, shape and a free translation with Adam. `gm` is the
//! Geman-McClure robustifier. Residuals are multiplied by `residual_scale`
//! (millimetres by default) before the robustifier, so `energy_data` is in
//! scaled units squared while `gm_sigma` is configured in metres.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adam::Adam;
use crate::body::{pose_skeleton, skeleton_vjp, BodyError, BodyModelDef, PoseShapeParams};
use crate::camera::Point3;

#[derive(Debug, Error)]
pub enum FitError {
    #[error(transparent)]
    Body(#[from] BodyError),
    #[error("joint subset is empty")]
    EmptyJointSubset,
    #[error("joint index {0} is out of range")]
    JointOutOfRange(usize),
    #[error("expected {expected} ground-truth joints, got {got}")]
    JointCount { expected: usize, got: usize },
    #[error("ground-truth joint {0} is not finite")]
    NonFiniteTarget(usize),
    #[error("energy became non-finite at iteration {iteration}")]
    NonFiniteEnergy { iteration: usize },
    #[error("invalid fit config: {0}")]
    InvalidConfig(String),
}

/// Geman-McClure robustifier `sigma^2 r^2 / (sigma^2 + r^2)`.
pub fn geman_mcclure(r: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let r2 = r * r;
    s2 * r2 / (s2 + r2)
}

/// `d gm / d r` divided by `r`; finite at `r = 0`.
fn geman_mcclure_weight(r: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let d = s2 + r * r;
    2.0 * s2 * s2 / (d * d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "params")]
pub enum FitInit {
    /// Zero pose and shape; translation placed at the centroid offset of the
    /// fitted joints.
    Zeros,
    Provided(PoseShapeParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub lambda_theta: f64,
    pub lambda_beta: f64,
    /// Robustifier scale in metres.
    pub gm_sigma: f64,
    pub max_iters: usize,
    pub step_size: f64,
    pub grad_tolerance: f64,
    /// Joints entering the data term; `None` selects the model's body block.
    pub joint_subset: Option<Vec<usize>>,
    pub init: FitInit,
    /// Multiplier applied to metric residuals before the robustifier.
    pub residual_scale: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda_theta: 1e3,
            lambda_beta: 1e2,
            gm_sigma: 0.1,
            max_iters: 500,
            step_size: 1e-2,
            grad_tolerance: 1e-6,
            joint_subset: None,
            init: FitInit::Zeros,
            residual_scale: 1000.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        let bad = |m: &str| Err(FitError::InvalidConfig(m.to_string()));
        if !(self.lambda_theta >= 0.0) || !(self.lambda_beta >= 0.0) {
            return bad("regularizer weights must be non-negative");
        }
        if !(self.gm_sigma > 0.0) {
            return bad("gm_sigma must be positive");
        }
        if self.max_iters < 1 {
            return bad("max_iters must be at least 1");
        }
        if !(self.step_size > 0.0) {
            return bad("step_size must be positive");
        }
        if !(self.residual_scale > 0.0) {
            return bad("residual_scale must be positive");
        }
        Ok(())
    }

    /// Robustifier scale in the units of `energy_data`.
    pub fn scaled_sigma(&self) -> f64 {
        self.gm_sigma * self.residual_scale
    }

    pub fn joints(&self, model: &BodyModelDef) -> Result<Vec<usize>, FitError> {
        let subset = match &self.joint_subset {
            Some(s) => s.clone(),
            None => model.body_joint_indices(),
        };
        if subset.is_empty() {
            return Err(FitError::EmptyJointSubset);
        }
        if let Some(&bad) = subset.iter().find(|&&k| k >= model.joint_count()) {
            return Err(FitError::JointOutOfRange(bad));
        }
        Ok(subset)
    }
}

/// Per-term energy breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub energy_total: f64,
    pub energy_data: f64,
    pub energy_pose_reg: f64,
    pub energy_shape_reg: f64,
    /// Metric residual norm per subset joint, in metres.
    pub per_joint_residuals: Vec<f64>,
    /// Robustified contribution of each subset joint.
    pub per_joint_data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: PoseShapeParams,
    pub energy_total: f64,
    pub energy_data: f64,
    pub energy_pose_reg: f64,
    pub energy_shape_reg: f64,
    pub iterations: usize,
    pub converged: bool,
    pub per_joint_residuals: Vec<f64>,
}

fn check_targets(model: &BodyModelDef, gt: &[Point3], subset: &[usize]) -> Result<(), FitError> {
    if gt.len() != model.joint_count() {
        return Err(FitError::JointCount {
            expected: model.joint_count(),
            got: gt.len(),
        });
    }
    if let Some(&k) = subset.iter().find(|&&k| !gt[k].iter().all(|v| v.is_finite())) {
        return Err(FitError::NonFiniteTarget(k));
    }
    Ok(())
}

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Energy breakdown and its gradient with respect to all parameter blocks.
/// Hand, jaw and translation entries of the gradient come from the data term only.
pub fn energy_with_gradient(
    model: &BodyModelDef,
    params: &PoseShapeParams,
    gt_joints: &[Point3],
    config: &FitConfig,
) -> Result<(EnergyBreakdown, PoseShapeParams), FitError> {
    let subset = config.joints(model)?;
    check_targets(model, gt_joints, &subset)?;
    let posed = pose_skeleton(model, params)?;
    let scale = config.residual_scale;
    let sigma = config.scaled_sigma();

    let mut joint_grads = vec![Vector3::zeros(); model.joint_count()];
    let mut residuals = Vec::with_capacity(subset.len());
    let mut contributions = Vec::with_capacity(subset.len());
    for &k in &subset {
        let d = posed.joints[k] - gt_joints[k];
        let r = d.norm();
        let rs = r * scale;
        residuals.push(r);
        contributions.push(geman_mcclure(rs, sigma));
        joint_grads[k] += d * (geman_mcclure_weight(rs, sigma) * scale * scale);
    }
    let energy_data: f64 = contributions.iter().sum();
    let pose_reg = sum_sq(&params.theta_body);
    let shape_reg = sum_sq(&params.beta);
    let total = energy_data + config.lambda_theta * pose_reg + config.lambda_beta * shape_reg;

    let mut grad = skeleton_vjp(model, &posed, &joint_grads);
    for (g, x) in grad.theta_body.iter_mut().zip(&params.theta_body) {
        *g += 2.0 * config.lambda_theta * x;
    }
    for (g, x) in grad.beta.iter_mut().zip(&params.beta) {
        *g += 2.0 * config.lambda_beta * x;
    }
    Ok((
        EnergyBreakdown {
            energy_total: total,
            energy_data,
            energy_pose_reg: pose_reg,
            energy_shape_reg: shape_reg,
            per_joint_residuals: residuals,
            per_joint_data: contributions,
        },
        grad,
    ))
}

/// Energy breakdown at `params`.
pub fn energy(
    model: &BodyModelDef,
    params: &PoseShapeParams,
    gt_joints: &[Point3],
    config: &FitConfig,
) -> Result<EnergyBreakdown, FitError> {
    Ok(energy_with_gradient(model, params, gt_joints, config)?.0)
}

// optimized variables: theta_body, beta, translation
fn pack(p: &PoseShapeParams) -> Vec<f64> {
    let mut x = p.theta_body.clone();
    x.extend_from_slice(&p.beta);
    x.extend_from_slice(&p.translation);
    x
}

fn unpack(x: &[f64], into: &mut PoseShapeParams) {
    let nb = into.theta_body.len();
    let ns = into.beta.len();
    into.theta_body.copy_from_slice(&x[..nb]);
    into.beta.copy_from_slice(&x[nb..nb + ns]);
    into.translation.copy_from_slice(&x[nb + ns..nb + ns + 3]);
}

fn initial_params(model: &BodyModelDef, gt: &[Point3], subset: &[usize], init: &FitInit) -> PoseShapeParams {
    match init {
        FitInit::Provided(p) => p.clone(),
        FitInit::Zeros => {
            let mut p = PoseShapeParams::zeros(model);
            let n = subset.len() as f64;
            let offset = subset
                .iter()
                .fold(Vector3::zeros(), |acc, &k| acc + gt[k] - model.template_joints()[k])
                / n;
            p.translation = [offset.x, offset.y, offset.z];
            p
        }
    }
}

/// Fits body pose, shape and translation to ground-truth joints.
pub fn fit(model: &BodyModelDef, gt_joints: &[Point3], config: &FitConfig) -> Result<FitResult, FitError> {
    config.validate()?;
    let subset = config.joints(model)?;
    check_targets(model, gt_joints, &subset)?;
    let mut params = initial_params(model, gt_joints, &subset, &config.init);
    params.check(model)?;

    let mut x = pack(&params);
    let mut opt = Adam::new(x.len(), config.step_size);
    let mut best: Option<(EnergyBreakdown, PoseShapeParams)> = None;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..=config.max_iters {
        unpack(&x, &mut params);
        let (breakdown, grad) = energy_with_gradient(model, &params, gt_joints, config)?;
        if !breakdown.energy_total.is_finite() {
            return Err(FitError::NonFiniteEnergy { iteration: iter });
        }
        if best.as_ref().is_none_or(|(b, _)| breakdown.energy_total < b.energy_total) {
            best = Some((breakdown, params.clone()));
        }
        let g = pack(&grad);
        let gmax = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if gmax < config.grad_tolerance {
            converged = true;
            break;
        }
        if iter == config.max_iters {
            break;
        }
        opt.step(&mut x, &g);
        iterations = iter + 1;
    }

    let (b, params) = best.expect("at least one evaluation");
    Ok(FitResult {
        params,
        energy_total: b.energy_total,
        energy_data: b.energy_data,
        energy_pose_reg: b.energy_pose_reg,
        energy_shape_reg: b.energy_shape_reg,
        iterations,
        converged,
        per_joint_residuals: b.per_joint_residuals,
    })
}

/// Fits every frame. Results keep input order; failures are collected per frame.
/// `jobs = None` or `Some(1)` runs serially.
pub fn batch_fit(
    model: &BodyModelDef,
    frames: &[Vec<Point3>],
    config: &FitConfig,
    jobs: Option<usize>,
) -> Vec<Result<FitResult, FitError>> {
    match jobs {
        Some(n) if n > 1 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .expect("thread pool");
            pool.install(|| frames.par_iter().map(|gt| fit(model, gt, config)).collect())
        }
        _ => frames.iter().map(|gt| fit(model, gt, config)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::forward_kinematics;
    use crate::toy::{make_toy_model, ToyVariant};

    #[test]
    fn geman_mcclure_examples() {
        let s = 0.1;
        assert_eq!(geman_mcclure(0.0, s), 0.0);
        assert!((geman_mcclure(s, s) - s * s / 2.0).abs() < 1e-18);
        assert!((geman_mcclure(1e6 * s, s) - s * s).abs() < 1e-9 * s * s);
        let mut prev = -1.0;
        for k in 0..1000 {
            let r = k as f64 * 0.001;
            let v = geman_mcclure(r, s);
            assert!(v >= prev && v < s * s);
            assert_eq!(v, geman_mcclure(-r, s));
            prev = v;
        }
    }

    #[test]
    fn weight_matches_derivative() {
        let (s, r, h) = (0.3, 0.17, 1e-7);
        let fd = (geman_mcclure(r + h, s) - geman_mcclure(r - h, s)) / (2.0 * h);
        assert!((geman_mcclure_weight(r, s) * r - fd).abs() < 1e-8);
    }

    #[test]
    fn rest_pose_energy_is_zero() {
        let model = make_toy_model(ToyVariant::Body16);
        let cfg = FitConfig::default();
        let e = energy(&model, &PoseShapeParams::zeros(&model), model.template_joints(), &cfg).unwrap();
        assert_eq!(e.energy_total, 0.0);
        assert_eq!(e.energy_data, 0.0);
    }

    #[test]
    fn generator_params_leave_only_regularizers() {
        let model = make_toy_model(ToyVariant::Body16);
        let cfg = FitConfig::default();
        let mut p = PoseShapeParams::zeros(&model);
        p.theta_body.iter_mut().enumerate().for_each(|(i, x)| *x = 0.01 * (i as f64 - 20.0));
        p.beta = vec![0.5, -0.3, 0.2, 1.0];
        p.translation = [0.1, 0.0, 2.5];
        let gt = forward_kinematics(&model, &p).unwrap();
        let e = energy(&model, &p, &gt, &cfg).unwrap();
        assert_eq!(e.energy_data, 0.0);
        let expected = 1e3 * sum_sq(&p.theta_body) + 1e2 * sum_sq(&p.beta);
        assert!((e.energy_total - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn displaced_joint_saturates() {
        let model = make_toy_model(ToyVariant::Body16);
        let cfg = FitConfig::default();
        let mut gt = model.template_joints().to_vec();
        gt[6].x += 10.0 * cfg.gm_sigma;
        let e = energy(&model, &PoseShapeParams::zeros(&model), &gt, &cfg).unwrap();
        let s2 = cfg.scaled_sigma().powi(2);
        assert!((e.energy_data - s2).abs() < 0.01 * s2);
        assert!(e.per_joint_data.iter().all(|&c| (0.0..s2).contains(&c)));
    }

    #[test]
    fn empty_subset_rejected() {
        let model = make_toy_model(ToyVariant::Body16);
        let cfg = FitConfig {
            joint_subset: Some(vec![]),
            ..FitConfig::default()
        };
        let r = energy(&model, &PoseShapeParams::zeros(&model), model.template_joints(), &cfg);
        assert!(matches!(r, Err(FitError::EmptyJointSubset)));
    }

    #[test]
    fn template_target_converges_immediately() {
        let model = make_toy_model(ToyVariant::Body16);
        let r = fit(&model, model.template_joints(), &FitConfig::default()).unwrap();
        assert!(r.converged);
        assert!(r.energy_total < 1e-8);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn non_finite_target_rejected() {
        let model = make_toy_model(ToyVariant::Body16);
        let mut gt = model.template_joints().to_vec();
        gt[3].y = f64::NAN;
        assert!(matches!(
            fit(&model, &gt, &FitConfig::default()),
            Err(FitError::NonFiniteTarget(3))
        ));
    }

    #[test]
    fn batch_preserves_order_and_collects_errors() {
        let model = make_toy_model(ToyVariant::Body16);
        let good = model.template_joints().to_vec();
        let mut shifted = good.clone();
        shifted.iter_mut().for_each(|p| p.z += 2.0);
        let bad = vec![Point3::zeros(); 3];
        let frames = vec![shifted.clone(), bad, good, shifted];
        let cfg = FitConfig {
            max_iters: 50,
            ..FitConfig::default()
        };
        let serial = batch_fit(&model, &frames, &cfg, None);
        let parallel = batch_fit(&model, &frames, &cfg, Some(4));
        assert!(serial[1].is_err() && parallel[1].is_err());
        for k in [0, 2, 3] {
            assert_eq!(serial[k].as_ref().unwrap(), parallel[k].as_ref().unwrap());
        }
        assert_eq!(serial[0].as_ref().unwrap(), serial[3].as_ref().unwrap());
    }
}
