use egofit_core::body::{forward_kinematics, skin_vertices, PoseShapeParams};
use egofit_core::camera::{FisheyeCamera, Pixel2, Point3};
use egofit_core::fitter::geman_mcclure;
use egofit_core::image::Image;
use egofit_core::losses::{gaussian_reference_denoiser, loss_3d, loss_prior, perturb, CosineSchedule, LossWeights, NoiseSchedule};
use egofit_core::metrics::{pa_mpjpe, umeyama_align};
use egofit_core::toy::{make_toy_model, ToyVariant};
use egofit_core::undistort::{generate_patches, patch_centers, tangent_frame, PatchGridConfig};
use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;

fn vec3(range: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_ignores_ray_length(p in vec3(2.0), k in 0.1f64..10.0) {
        prop_assume!(p.xy().norm() > 1e-3 && p.z > -0.2);
        let cam = FisheyeCamera::reference_256();
        let a = cam.project(&p).unwrap();
        let b = cam.project(&(p * k)).unwrap();
        prop_assert!((a - b).norm() < 1e-9);
    }

    #[test]
    fn unproject_has_requested_norm(u in 8.0f64..248.0, v in 8.0f64..248.0, a in 0.01f64..100.0) {
        let cam = FisheyeCamera::reference_256();
        let p = cam.unproject(&Pixel2::new(u, v), a).unwrap();
        prop_assert!((p.norm() - a).abs() <= 1e-12 * a);
    }

    #[test]
    fn round_trip_inside_fitted_domain(r in 0.0f64..120.0, phi in 0.0f64..std::f64::consts::TAU) {
        let cam = FisheyeCamera::reference_256();
        let px = Pixel2::new(128.0 + r * phi.cos(), 128.0 + r * phi.sin());
        let back = cam.project(&cam.unproject(&px, 1.0).unwrap()).unwrap();
        prop_assert!((back - px).norm() < 0.5);
    }

    #[test]
    fn tangent_frames_are_orthonormal(n in 2usize..24, offset in 1.0f64..16.0) {
        let cam = FisheyeCamera::reference_256();
        let config = PatchGridConfig { n_patches_per_side: n, neighbor_offset_px: offset, ..PatchGridConfig::default() };
        for row in patch_centers(&config, 256, 256) {
            for c in row {
                let f = tangent_frame(&cam, &c, config.neighbor_offset_px).unwrap();
                prop_assert!(f.axis_x.dot(&f.axis_z).abs() < 1e-9);
                prop_assert!(f.axis_y.dot(&f.axis_z).abs() < 1e-9);
                prop_assert!(f.axis_x.dot(&f.axis_y).abs() < 1e-9);
                prop_assert!((f.axis_x.norm() - 1.0).abs() < 1e-9);
                prop_assert!((f.center_on_sphere.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_images_stay_constant(value in 0.0f64..255.0) {
        let cam = FisheyeCamera::reference_256();
        let config = PatchGridConfig { n_patches_per_side: 4, samples_per_patch: 4, ..PatchGridConfig::default() };
        let image = Image::filled(256, 256, 1, value).unwrap();
        let set = generate_patches(&image, &cam, &config).unwrap();
        prop_assert!(set.patches.iter().all(|p| p.values.iter().all(|&v| v == value)));
    }

    #[test]
    fn bones_keep_their_length(pose in proptest::collection::vec(-1.5f64..1.5, 48), t in vec3(3.0)) {
        let model = make_toy_model(ToyVariant::Body16);
        let mut p = PoseShapeParams::zeros(&model);
        p.theta_body = pose;
        p.translation = [t.x, t.y, t.z];
        let joints = forward_kinematics(&model, &p).unwrap();
        let rest = model.template_joints();
        for (k, parent) in model.parents().iter().enumerate() {
            if let Some(q) = parent {
                let posed = (joints[k] - joints[*q]).norm();
                let bone = (rest[k] - rest[*q]).norm();
                prop_assert!((posed - bone).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn root_rotation_rotates_all_vertices(axis in vec3(1.0), angle in -3.0f64..3.0) {
        prop_assume!(axis.norm() > 1e-3);
        let model = make_toy_model(ToyVariant::Body16);
        let w = axis.normalize() * angle;
        let mut p = PoseShapeParams::zeros(&model);
        p.theta_body[..3].copy_from_slice(w.as_slice());
        let rot = Rotation3::new(w);
        let root = model.template_joints()[0];
        let verts = skin_vertices(&model, &p).unwrap();
        for (v, rest) in verts.iter().zip(model.template_vertices()) {
            prop_assert!((v - (rot * (rest - root) + root)).norm() < 1e-12);
        }
    }

    #[test]
    fn similarity_transforms_align_exactly(
        points in proptest::collection::vec(vec3(1.0), 6..20),
        w in vec3(3.0),
        s in 0.2f64..5.0,
        t in vec3(10.0),
    ) {
        prop_assume!(umeyama_align(&points, &points, true).is_ok());
        let rot = Rotation3::new(w);
        let moved: Vec<Point3> = points.iter().map(|p| rot * p * s + t).collect();
        prop_assert!(pa_mpjpe(&moved, &points).unwrap() < 1e-6);
    }

    #[test]
    fn robustifier_below_sigma_squared(r in -1e3f64..1e3, sigma in 0.01f64..10.0) {
        let g = geman_mcclure(r, sigma);
        prop_assert!(g >= 0.0 && g < sigma * sigma);
        prop_assert!(geman_mcclure(r.abs() * 1.1 + 1e-9, sigma) >= g);
    }

    #[test]
    fn joint_loss_zero_iff_equal(points in proptest::collection::vec(vec3(2.0), 3..10), d in vec3(0.1)) {
        prop_assert_eq!(loss_3d(&points, &points, None).unwrap(), 0.0);
        let mut moved = points.clone();
        moved[0] += d;
        let l = loss_3d(&moved, &points, None).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert_eq!(l > 0.0, d.norm_squared() > 0.0);
    }

    #[test]
    fn prior_weight_is_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let w = LossWeights::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(w.lambda_prior(lo) >= w.lambda_prior(hi));
    }

    #[test]
    fn schedule_stays_in_unit_interval(tau in 0.0f64..1.0) {
        let ab = CosineSchedule::default().alpha_bar(tau);
        prop_assert!(ab > 0.0 && ab <= 1.0);
    }

    #[test]
    fn zero_level_perturbation_is_identity(theta in proptest::collection::vec(-2.0f64..2.0, 9), noise in proptest::collection::vec(-3.0f64..3.0, 9)) {
        prop_assert_eq!(perturb(&theta, 0.0, &CosineSchedule::default(), &noise).unwrap(), theta);
    }

    #[test]
    fn prior_contracts_by_root_alpha_bar(theta in proptest::collection::vec(-2.0f64..2.0, 9), tau in 0.0f64..1.0) {
        let schedule = CosineSchedule::default();
        let denoiser = gaussian_reference_denoiser(vec![0.0; 9], schedule);
        let got = loss_prior(&theta, tau, &schedule, &denoiser, &[0.0; 9]).unwrap();
        let expected = (1.0 - schedule.alpha_bar(tau).sqrt()).powi(2) * theta.iter().map(|x| x * x).sum::<f64>();
        prop_assert!((got - expected).abs() < 1e-9, "loss {} vs {}", got, expected);
    }
}
