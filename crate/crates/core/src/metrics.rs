//! Procrustes-aligned evaluation metrics.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::Point3;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("point sets differ in size ({0} vs {1})")]
    ShapeMismatch(usize, usize),
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(&'static str),
}

/// `x -> scale * R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        self.rotation * p * self.scale + self.translation
    }
}

fn centroid(points: &[Point3]) -> Point3 {
    points.iter().fold(Point3::zeros(), |a, p| a + p) / points.len() as f64
}

/// Least-squares similarity (or rigid) transform taking `source` onto `target`,
/// via the SVD of the cross-covariance with reflection correction.
pub fn umeyama_align(
    source: &[Point3],
    target: &[Point3],
    with_scale: bool,
) -> Result<SimilarityTransform, MetricsError> {
    if source.len() != target.len() {
        return Err(MetricsError::ShapeMismatch(source.len(), target.len()));
    }
    let k = source.len();
    if k < 3 {
        return Err(MetricsError::TooFewPoints(k));
    }
    let mu_s = centroid(source);
    let mu_t = centroid(target);
    let n = k as f64;

    let mut cov = Matrix3::zeros();
    let mut src_cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, t) in source.iter().zip(target) {
        let ds = s - mu_s;
        cov += (t - mu_t) * ds.transpose();
        src_cov += ds * ds.transpose();
        var_s += ds.norm_squared();
    }
    cov /= n;
    src_cov /= n;
    var_s /= n;

    let spread = src_cov.symmetric_eigenvalues();
    let mut ev: Vec<f64> = spread.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) {
        return Err(MetricsError::DegenerateConfiguration("source points coincide"));
    }
    if ev[1] <= ev[0] * 1e-12 {
        return Err(MetricsError::DegenerateConfiguration("source points are collinear"));
    }

    let svd = cov.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let d = svd.singular_values;
    let mut correction = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        correction[(2, 2)] = -1.0;
    }
    // singular values come sorted in decreasing order
    let rotation = u * correction * v_t;
    let scale = if with_scale {
        let trace = d[0] * correction[(0, 0)] + d[1] * correction[(1, 1)] + d[2] * correction[(2, 2)];
        trace / var_s
    } else {
        1.0
    };
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(MetricsError::DegenerateConfiguration("target points coincide"));
    }
    let translation = mu_t - rotation * mu_s * scale;
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation,
    })
}

/// Mean Euclidean distance between `tf(pred)` and `gt`, in the input units.
pub fn mean_residual(tf: &SimilarityTransform, pred: &[Point3], gt: &[Point3]) -> f64 {
    pred.iter().zip(gt).map(|(p, g)| (tf.apply(p) - g).norm()).sum::<f64>() / pred.len() as f64
}

/// Procrustes-aligned mean error in millimetres (inputs in metres).
pub fn pa_mean_error_mm(pred: &[Point3], gt: &[Point3], with_scale: bool) -> Result<f64, MetricsError> {
    let tf = umeyama_align(pred, gt, with_scale)?;
    Ok(1000.0 * mean_residual(&tf, pred, gt))
}

/// PA-MPJPE in millimetres.
pub fn pa_mpjpe(pred_joints: &[Point3], gt_joints: &[Point3]) -> Result<f64, MetricsError> {
    pa_mean_error_mm(pred_joints, gt_joints, true)
}

/// PA-MPVPE in millimetres.
pub fn pa_mpvpe(pred_vertices: &[Point3], gt_vertices: &[Point3]) -> Result<f64, MetricsError> {
    pa_mean_error_mm(pred_vertices, gt_vertices, true)
}

/// Picks `indices` out of `points`.
pub fn select(points: &[Point3], indices: &[usize]) -> Vec<Point3> {
    indices.iter().map(|&k| points[k]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;

    fn sample() -> Vec<Point3> {
        vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.2, -0.1),
            Point3::new(0.3, 1.1, 0.4),
            Point3::new(-0.2, 0.5, 1.3),
            Point3::new(0.7, -0.6, 0.2),
        ]
    }

    #[test]
    fn identity_alignment() {
        let x = sample();
        let tf = umeyama_align(&x, &x, true).unwrap();
        assert_relative_eq!(tf.scale, 1.0, epsilon = 1e-12);
        assert_relative_eq!(tf.rotation, Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(tf.translation, Vector3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn recovers_exact_similarity() {
        let x = sample();
        let rot = *Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2).matrix();
        let t = Vector3::new(1.0, 0.0, 0.0);
        let y: Vec<Point3> = x.iter().map(|p| rot * p * 2.0 + t).collect();
        let tf = umeyama_align(&x, &y, true).unwrap();
        assert_relative_eq!(tf.scale, 2.0, epsilon = 1e-9);
        assert_relative_eq!(tf.rotation, rot, epsilon = 1e-9);
        assert_relative_eq!(tf.translation, t, epsilon = 1e-9);
        assert!(pa_mpjpe(&y, &x).unwrap() < 1e-6);
    }

    #[test]
    fn reflection_is_not_returned() {
        let x = sample();
        let y: Vec<Point3> = x.iter().map(|p| Point3::new(-p.x, p.y, p.z)).collect();
        let tf = umeyama_align(&x, &y, true).unwrap();
        assert_relative_eq!(tf.rotation.determinant(), 1.0, epsilon = 1e-9);
        assert_relative_eq!(tf.rotation.transpose() * tf.rotation, Matrix3::identity(), epsilon = 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        let line: Vec<Point3> = (0..5).map(|k| Point3::new(k as f64, 2.0 * k as f64, 0.0)).collect();
        assert!(matches!(
            umeyama_align(&line, &sample(), true),
            Err(MetricsError::DegenerateConfiguration(_))
        ));
        let same = vec![Point3::new(1.0, 1.0, 1.0); 4];
        assert!(matches!(
            umeyama_align(&same, &same, true),
            Err(MetricsError::DegenerateConfiguration(_))
        ));
        assert_eq!(umeyama_align(&sample()[..2], &sample()[..2], true), Err(MetricsError::TooFewPoints(2)));
        assert_eq!(umeyama_align(&sample(), &sample()[..3], true), Err(MetricsError::ShapeMismatch(5, 3)));
    }

    #[test]
    fn global_scaling_leaves_scaled_pa_unchanged() {
        let x = sample();
        let y: Vec<Point3> = x
            .iter()
            .enumerate()
            .map(|(k, p)| p + Vector3::new(0.01 * k as f64, -0.02, 0.005 * (k * k) as f64))
            .collect();
        let base = pa_mpjpe(&y, &x).unwrap();
        let xs: Vec<Point3> = x.iter().map(|p| p * 0.001).collect();
        let ys: Vec<Point3> = y.iter().map(|p| p * 0.001).collect();
        assert_relative_eq!(pa_mean_error_mm(&ys, &xs, false).unwrap(), 0.001 * pa_mean_error_mm(&y, &x, false).unwrap(), max_relative = 1e-9);
        // with scale the alignment absorbs the pred-to-gt scale but the residual is in gt units
        assert_relative_eq!(pa_mpjpe(&ys, &xs).unwrap(), 0.001 * base, max_relative = 1e-9);
        let y_big: Vec<Point3> = y.iter().map(|p| p * 3.0).collect();
        assert_relative_eq!(pa_mpjpe(&y_big, &x).unwrap(), base, max_relative = 1e-9);
    }
}
