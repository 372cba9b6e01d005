//! Independent reference computations checked against the library.

use std::f64::consts::PI;

use egofit_core::body::{forward_kinematics, skin_vertices, PoseShapeParams};
use egofit_core::camera::{FisheyeCamera, Pixel2, Point3};
use egofit_core::fitter::{fit, FitConfig};
use egofit_core::losses::{
    gaussian_reference_denoiser, loss_2d, loss_3d, loss_pose, perturb, CosineSchedule, Denoiser, NoiseSchedule,
};
use egofit_core::metrics::{pa_mpjpe, pa_mpvpe};
use egofit_core::toy::{make_toy_model, ToyVariant};
use egofit_core::undistort::{generate_patches, PatchGridConfig};
use egofit_core::image::Image;
use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().enumerate().map(|(q, c)| c * x.powi(q as i32)).sum()
}

/// Patch sampling coordinates computed from scratch for cell `(row, col)`.
fn reference_patch_coords(cam: &FisheyeCamera, n: usize, m: usize, d: f64, side: f64, row: usize, col: usize) -> Vec<Pixel2> {
    let (w, h) = (cam.image_width() as f64, cam.image_height() as f64);
    let (cx, cy) = (cam.principal_point().x, cam.principal_point().y);
    let fwd = cam.forward_coeffs();
    let inv = cam.inverse_coeffs();
    let ray = |u: f64, v: f64| {
        let (a, b) = (u - cx, v - cy);
        let r = (a * a + b * b).sqrt();
        let z = poly(inv, r);
        let len = (a * a + b * b + z * z).sqrt();
        [a / len, b / len, z / len]
    };
    let project = |p: [f64; 3]| {
        let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
        let rho = (p[2] / r).atan();
        let radius = poly(fwd, rho);
        Pixel2::new(cx + radius * p[0] / r, cy + radius * p[1] / r)
    };
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];

    let u = (w / n as f64) * (col as f64 + 0.5);
    let v = (h / n as f64) * (row as f64 + 0.5);
    let pc = ray(u, v);
    let pu = ray(u + d, v);
    let k = dot(pc, pc) / dot(pu, pc);
    let px = [k * pu[0], k * pu[1], k * pu[2]];
    let dx = [px[0] - pc[0], px[1] - pc[1], px[2] - pc[2]];
    let nx = dot(dx, dx).sqrt();
    let vx = [dx[0] / nx, dx[1] / nx, dx[2] / nx];
    let c = [pc[1] * vx[2] - pc[2] * vx[1], pc[2] * vx[0] - pc[0] * vx[2], pc[0] * vx[1] - pc[1] * vx[0]];
    let nc = dot(c, c).sqrt();
    let vy = [c[0] / nc, c[1] / nc, c[2] / nc];

    let mut out = Vec::new();
    for nn in 0..m {
        for mm in 0..m {
            let a = (mm as f64 - (m as f64 - 1.0) / 2.0) * side / m as f64;
            let b = (nn as f64 - (m as f64 - 1.0) / 2.0) * side / m as f64;
            out.push(project([
                pc[0] + a * vx[0] + b * vy[0],
                pc[1] + a * vx[1] + b * vy[1],
                pc[2] + a * vx[2] + b * vy[2],
            ]));
        }
    }
    out
}

#[test]
fn patch_coordinates_match_reference_pipeline() {
    let cam = FisheyeCamera::reference_256();
    let config = PatchGridConfig::default();
    let image = Image::filled(256, 256, 1, 0.0).unwrap();
    let set = generate_patches(&image, &cam, &config).unwrap();
    for row in 0..16 {
        for col in 0..16 {
            let expected = reference_patch_coords(&cam, 16, 16, 8.0, 0.2, row, col);
            for (a, b) in set.patch(row, col).sample_coords.iter().zip(&expected) {
                assert!((a - b).norm() < 1e-9, "cell ({row},{col}): {a:?} vs {b:?}");
            }
        }
    }
}

#[test]
fn parameter_and_joint_losses_match_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cam = FisheyeCamera::reference_256();
    for _ in 0..10 {
        let a: Vec<f64> = (0..48).map(|_| gauss(&mut rng)).collect();
        let b: Vec<f64> = (0..48).map(|_| gauss(&mut rng)).collect();
        let mut sum = 0.0;
        for k in 0..48 {
            sum += (a[k] - b[k]) * (a[k] - b[k]);
        }
        assert!((loss_pose(&a, &b).unwrap() - sum).abs() <= 1e-12 * sum.max(1.0));

        let p: Vec<Point3> = (0..16).map(|_| Point3::new(gauss(&mut rng), gauss(&mut rng), gauss(&mut rng))).collect();
        let q: Vec<Point3> = (0..16).map(|_| Point3::new(gauss(&mut rng), gauss(&mut rng), gauss(&mut rng))).collect();
        let mut sum = 0.0;
        for k in 0..16 {
            for ax in 0..3 {
                sum += (p[k][ax] - q[k][ax]).powi(2);
            }
        }
        assert!((loss_3d(&p, &q, None).unwrap() - sum).abs() <= 1e-12 * sum.max(1.0));

        let t = Vector3::new(0.1, -0.1, 2.5);
        let gt: Vec<Pixel2> = (0..16).map(|_| Pixel2::new(rng.random_range(0.0..256.0), rng.random_range(0.0..256.0))).collect();
        let mut sum = 0.0;
        for k in 0..16 {
            let px = cam.project(&(p[k] + t)).unwrap();
            sum += (px.x - gt[k].x).powi(2) + (px.y - gt[k].y).powi(2);
        }
        assert!((loss_2d(&p, &t, &gt, &cam, None).unwrap() - sum).abs() <= 1e-9 * sum.max(1.0));
    }
}

#[test]
fn perturbation_energy_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = CosineSchedule::default();
    let theta: Vec<f64> = (0..12).map(|k| 0.1 * k as f64 - 0.5).collect();
    let norm2: f64 = theta.iter().map(|x| x * x).sum();
    for tau in [0.1, 0.3, 0.6] {
        let ab = s.alpha_bar(tau);
        let draws = 10_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let noise: Vec<f64> = (0..12).map(|_| gauss(&mut rng)).collect();
            let out = perturb(&theta, tau, &s, &noise).unwrap();
            acc += out.iter().map(|x| x * x).sum::<f64>();
        }
        let expected = ab * norm2 + (1.0 - ab) * 12.0;
        let got = acc / draws as f64;
        assert!((got - expected).abs() < 0.05 * expected, "tau {tau}: {got} vs {expected}");
    }
}

/// Self-normalized importance estimate of `E[theta | y]` for `theta ~ N(mean, 1)`
/// and `y = sqrt(ab) theta + sqrt(1 - ab) eps`.
pub fn mc_posterior_mean(y: f64, ab: f64, mean: f64, draws: usize, rng: &mut ChaCha8Rng) -> f64 {
    let (a, var) = (ab.sqrt(), 1.0 - ab);
    let (mut num, mut den) = (0.0, 0.0);
    for _ in 0..draws {
        let theta = mean + gauss(rng);
        let w = (-(y - a * theta).powi(2) / (2.0 * var)).exp();
        num += w * theta;
        den += w;
    }
    num / den
}

#[test]
fn reference_denoiser_is_the_posterior_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = CosineSchedule::default();
    for target_ab in [0.9_f64, 0.75, 0.5] {
        let tau = 2.0 * target_ab.sqrt().acos() / PI;
        assert!((s.alpha_bar(tau) - target_ab).abs() < 1e-12);
        for mean in [0.0, 0.4] {
            let d = gaussian_reference_denoiser(vec![mean; 3], s);
            let y = [0.8, -1.3, 2.0];
            let closed = d.denoise(&y, tau).unwrap();
            for (k, &yk) in y.iter().enumerate() {
                let mc = mc_posterior_mean(yk, target_ab, mean, 200_000, &mut rng);
                assert!(
                    (mc - closed[k]).abs() <= 0.02 * closed[k].abs(),
                    "ab {target_ab}, mean {mean}, y {yk}: {mc} vs {}",
                    closed[k]
                );
            }
        }
    }
}

fn sample_small_pose(rng: &mut ChaCha8Rng, model: &egofit_core::BodyModelDef) -> PoseShapeParams {
    let mut p = PoseShapeParams::zeros(model);
    p.theta_body.iter_mut().for_each(|x| *x = rng.random_range(-0.5..0.5));
    p.beta.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
    p.translation = [0.1, -0.05, 2.4];
    p
}

#[test]
fn fitting_recovers_small_poses_and_ignores_an_outlier() {
    let model = make_toy_model(ToyVariant::Body16);
    let config = FitConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..4 {
        let truth = sample_small_pose(&mut rng, &model);
        let gt = forward_kinematics(&model, &truth).unwrap();
        let clean = fit(&model, &gt, &config).unwrap();
        let clean_err = pa_mpjpe(&forward_kinematics(&model, &clean.params).unwrap(), &gt).unwrap();
        assert!(clean_err < 5.0, "noiseless error {clean_err} mm");

        let k = rng.random_range(0..16);
        let mut corrupted = gt.clone();
        corrupted[k] += Vector3::new(0.6, -0.8, 0.0);
        let robust = fit(&model, &corrupted, &config).unwrap();
        let keep: Vec<usize> = (0..16).filter(|&i| i != k).collect();
        let fitted = forward_kinematics(&model, &robust.params).unwrap();
        let a: Vec<Point3> = keep.iter().map(|&i| fitted[i]).collect();
        let b: Vec<Point3> = keep.iter().map(|&i| gt[i]).collect();
        let keep_clean: Vec<Point3> = {
            let f = forward_kinematics(&model, &clean.params).unwrap();
            keep.iter().map(|&i| f[i]).collect()
        };
        let base = pa_mpjpe(&keep_clean, &b).unwrap();
        let err = pa_mpjpe(&a, &b).unwrap();
        assert!(err <= 2.0 * base, "outlier fit {err} mm vs noiseless {base} mm");
    }
}

/// Sum of squared residuals after the best scale and translation for rotation `r`.
fn sse_for_rotation(r: &Matrix3<f64>, x: &[Point3], y: &[Point3]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<Point3>() / n;
    let my = y.iter().sum::<Point3>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        num += (b - my).dot(&(r * (a - mx)));
        den += (a - mx).norm_squared();
    }
    let s = num / den;
    let mut sse = 0.0;
    let mut mean_dist = 0.0;
    for (a, b) in x.iter().zip(y) {
        let d = (r * (a - mx)) * s + my - b;
        sse += d.norm_squared();
        mean_dist += d.norm();
    }
    (sse, mean_dist / n)
}

/// Dense rotation-grid search refined by shrinking pattern steps.
fn brute_force_alignment(x: &[Point3], y: &[Point3]) -> f64 {
    let steps = 24;
    let mut best = (f64::INFINITY, Matrix3::identity());
    for i in 0..steps {
        for j in 0..steps {
            for k in 0..steps {
                let w = Vector3::new(i as f64, j as f64, k as f64) * (2.0 * PI / steps as f64) - Vector3::repeat(PI);
                let r = *Rotation3::new(w).matrix();
                let (sse, _) = sse_for_rotation(&r, x, y);
                if sse < best.0 {
                    best = (sse, r);
                }
            }
        }
    }
    let mut step = 0.3;
    while step > 1e-11 {
        let mut improved = false;
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                let mut w = Vector3::zeros();
                w[axis] = sign * step;
                let r = best.1 * *Rotation3::new(w).matrix();
                let (sse, _) = sse_for_rotation(&r, x, y);
                if sse < best.0 {
                    best = (sse, r);
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    sse_for_rotation(&best.1, x, y).1
}

#[test]
fn alignment_matches_rotation_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..3 {
        let x = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.3, 0.0, 0.05),
            Point3::new(0.0, 0.25, -0.03),
            Point3::new(0.05, 0.1, 0.35),
        ];
        let rot = Rotation3::new(Vector3::new(gauss(&mut rng), gauss(&mut rng), gauss(&mut rng)));
        let y: Vec<Point3> = x
            .iter()
            .map(|p| rot * p * 1.3 + Vector3::new(0.5, -0.2, 1.0) + Vector3::new(gauss(&mut rng), gauss(&mut rng), gauss(&mut rng)) * 0.01)
            .collect();
        let oracle_mm = 1000.0 * brute_force_alignment(&x, &y);
        let got = pa_mpjpe(&x, &y).unwrap();
        assert!((got - oracle_mm).abs() < 1e-6, "{got} vs {oracle_mm}");
    }
}

/// Horn's quaternion solution followed by the explicit mean residual.
fn quaternion_alignment_error(x: &[Point3], y: &[Point3]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<Point3>() / n;
    let my = y.iter().sum::<Point3>() / n;
    let mut s = Matrix3::zeros();
    for (a, b) in x.iter().zip(y) {
        s += (a - mx) * (b - my).transpose();
    }
    let (sxx, sxy, sxz) = (s[(0, 0)], s[(0, 1)], s[(0, 2)]);
    let (syx, syy, syz) = (s[(1, 0)], s[(1, 1)], s[(1, 2)]);
    let (szx, szy, szz) = (s[(2, 0)], s[(2, 1)], s[(2, 2)]);
    let k = Matrix4::new(
        sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
        syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
        szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
        sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz,
    );
    let eig = k.symmetric_eigen();
    let idx = (0..4).max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b])).unwrap();
    let q = eig.eigenvectors.column(idx);
    let (w, i, j, kk) = (q[0], q[1], q[2], q[3]);
    let r = Matrix3::new(
        w * w + i * i - j * j - kk * kk, 2.0 * (i * j - w * kk), 2.0 * (i * kk + w * j),
        2.0 * (i * j + w * kk), w * w - i * i + j * j - kk * kk, 2.0 * (j * kk - w * i),
        2.0 * (i * kk - w * j), 2.0 * (j * kk + w * i), w * w - i * i - j * j + kk * kk,
    );
    1000.0 * sse_for_rotation(&r, x, y).1
}

#[test]
fn displaced_joints_match_quaternion_alignment() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = make_toy_model(ToyVariant::Body16);
    for _ in 0..5 {
        let gt = forward_kinematics(&model, &sample_small_pose(&mut rng, &model)).unwrap();
        let pred: Vec<Point3> = gt
            .iter()
            .map(|p| {
                let dir = Vector3::new(gauss(&mut rng), gauss(&mut rng), gauss(&mut rng)).normalize();
                p + dir * 0.01
            })
            .collect();
        let expected = quaternion_alignment_error(&pred, &gt);
        assert!((pa_mpjpe(&pred, &gt).unwrap() - expected).abs() < 1e-6);
    }
}

#[test]
fn mesh_error_matches_quaternion_alignment() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let model = make_toy_model(ToyVariant::WholeBody22);
    for _ in 0..3 {
        let a = sample_small_pose(&mut rng, &model);
        let mut b = a.clone();
        b.theta_body.iter_mut().for_each(|x| *x += 0.05 * gauss(&mut rng));
        let va = skin_vertices(&model, &a).unwrap();
        let vb = skin_vertices(&model, &b).unwrap();
        let expected = quaternion_alignment_error(&vb, &va);
        assert!((pa_mpvpe(&vb, &va).unwrap() - expected).abs() < 1e-6);
    }
}
