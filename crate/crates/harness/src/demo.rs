//! Loss breakdown of a frame's generator parameters against themselves and
//! against a jittered copy.

use egofit_core::body::{forward_kinematics, BodyModelDef, PoseShapeParams};
use egofit_core::camera::{FisheyeCamera, Pixel2};
use egofit_core::losses::{
    gaussian_reference_denoiser, total_loss, CosineSchedule, LossBreakdown, LossInputs, LossWeights, PriorInputs,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::DemoConfig;
use crate::dataset::{frame_seed, Dataset};
use crate::error::Result;
use crate::sampler::PriorSampler;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossesDemoReport {
    pub frame_id: u64,
    pub seed: u64,
    pub tau: f64,
    pub progress: f64,
    pub lambda_prior: f64,
    pub zero_noise: bool,
    pub config_digest: String,
    pub weights: LossWeights,
    pub against_self: LossBreakdown,
    pub against_perturbed: LossBreakdown,
}

impl LossesDemoReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn jitter(p: &PoseShapeParams, cfg: &DemoConfig, rng: &mut ChaCha8Rng) -> PoseShapeParams {
    let mut n = || -> f64 { StandardNormal.sample(rng) };
    let mut out = p.clone();
    let pose: Vec<f64> = out.whole_body_pose().iter().map(|x| x + cfg.pose_jitter * n()).collect();
    out.set_whole_body_pose(&pose);
    out.beta.iter_mut().for_each(|b| *b += cfg.shape_jitter * n());
    out.translation.iter_mut().for_each(|t| *t += cfg.translation_jitter * n());
    out
}

#[allow(clippy::too_many_arguments)]
fn breakdown(
    model: &BodyModelDef,
    camera: &FisheyeCamera,
    gt: &PoseShapeParams,
    pred: &PoseShapeParams,
    tau: f64,
    noise: &[f64],
    weights: &LossWeights,
    progress: f64,
) -> Result<LossBreakdown> {
    let joints = forward_kinematics(model, gt)?;
    let pixels = joints
        .iter()
        .map(|p| camera.project(p))
        .collect::<std::result::Result<Vec<Pixel2>, _>>()?;
    let schedule = CosineSchedule::default();
    let denoiser = gaussian_reference_denoiser(vec![0.0; noise.len()], schedule);
    let inputs = LossInputs {
        model,
        pred,
        target_body_pose: &gt.theta_body,
        target_beta: &gt.beta,
        gt_joints_3d: &joints,
        gt_joints_2d: &pixels,
        camera,
        mask: None,
        prior: PriorInputs {
            tau,
            noise,
            schedule: &schedule,
            denoiser: &denoiser,
        },
    };
    Ok(total_loss(&inputs, weights, progress)?)
}

/// Computes every loss term for one frame. `tau` defaults to a seeded draw in
/// the prior sampler's range.
#[allow(clippy::too_many_arguments)]
pub fn run_losses_demo(
    dataset: &Dataset,
    frame_id: u64,
    weights: &LossWeights,
    demo: &DemoConfig,
    tau: Option<f64>,
    seed: u64,
    zero_noise: bool,
    config_digest: &str,
) -> Result<LossesDemoReport> {
    let model = dataset.model()?;
    let camera = dataset.camera()?;
    let frame = dataset.frame(frame_id)?;
    let dim = model.layout().pose_dim();
    let mut sampler = PriorSampler::new(frame_seed(seed, frame_id));
    let (sampled_tau, mut noise) = sampler.sample(dim);
    if zero_noise {
        noise.iter_mut().for_each(|e| *e = 0.0);
    }
    let tau = tau.unwrap_or(sampled_tau);
    let gt = &frame.gt_params;
    let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(seed, frame_id).rotate_left(17));
    let perturbed = jitter(gt, demo, &mut rng);
    let progress = demo.progress;
    Ok(LossesDemoReport {
        frame_id,
        seed,
        tau,
        progress,
        lambda_prior: weights.lambda_prior(progress),
        zero_noise,
        config_digest: config_digest.into(),
        weights: weights.clone(),
        against_self: breakdown(&model, &camera, gt, gt, tau, &noise, weights, progress)?,
        against_perturbed: breakdown(&model, &camera, gt, &perturbed, tau, &noise, weights, progress)?,
    })
}
