//! Polynomial omnidirectional (Scaramuzza-style) fisheye camera.
//!
//! Forward projection maps the elevation angle `rho = atan(z / sqrt(x^2 + y^2))`
//! through a polynomial `f(rho)` to an image radius; the inverse maps a centered
//! image radius `rho'` through a second polynomial `f'(rho')` to the axial
//! component of the viewing ray `(u, v, f'(rho'))`.
//!
//! Pixel coordinates at the public boundary are absolute. The principal point is
//! subtracted on entry to `unproject` and added on exit from `project`.
//!
//! Orientation convention: `f` is decreasing in `rho`, so the optical axis maps
//! to the principal point and the horizon (`rho = 0`) maps to radius `f(0)`.

use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2x3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute pixel coordinate `(u, v)`.
pub type Pixel2 = Vector2<f64>;
/// Camera-frame point `(x, y, z)`.
pub type Point3 = Vector3<f64>;

/// Planar radius below which a point is treated as lying on the optical axis.
pub const AXIS_EPS: f64 = 1e-12;
/// Default degree of the fitted inverse polynomial.
pub const DEFAULT_INVERSE_DEGREE: usize = 6;
/// Default number of elevation samples used to fit the inverse polynomial.
pub const DEFAULT_INVERSE_SAMPLES: usize = 512;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("cannot project the zero vector")]
    ZeroNormPoint,
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("distance along the ray must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("inverse polynomial fit is rank deficient")]
    SingularNormalEquations,
    #[error("forward polynomial is not strictly decreasing on (0, pi/2]")]
    NonMonotonicForwardPoly,
    #[error("invalid fit request: {0}")]
    InvalidFit(String),
    #[error("camera invariant violated: {0}")]
    InvariantViolation(String),
    #[error("failed to parse calibration {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Evaluates `sum_q coeffs[q] * x^q` by Horner's scheme.
///
/// An empty coefficient slice evaluates to zero.
pub fn eval_poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Value and first derivative of the polynomial at `x`.
pub fn eval_poly_with_derivative(coeffs: &[f64], x: f64) -> (f64, f64) {
    let mut value = 0.0;
    let mut deriv = 0.0;
    for &c in coeffs.iter().rev() {
        deriv = deriv * x + value;
        value = value * x + c;
    }
    (value, deriv)
}

/// Fisheye camera with forward and inverse radial polynomials.
#[derive(Debug, Clone, PartialEq)]
pub struct FisheyeCamera {
    forward_coeffs: Vec<f64>,
    inverse_coeffs: Vec<f64>,
    image_width: u32,
    image_height: u32,
    principal_point: Pixel2,
}

/// On-disk calibration layout. `inverse_coeffs` may be omitted, in which case
/// it is fitted from the forward polynomial on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    pub forward_coeffs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inverse_coeffs: Option<Vec<f64>>,
    pub image_width: u32,
    pub image_height: u32,
    pub principal_point: [f64; 2],
}

impl FisheyeCamera {
    /// Builds a camera from explicit coefficients, checking all invariants.
    pub fn new(
        forward_coeffs: Vec<f64>,
        inverse_coeffs: Vec<f64>,
        image_width: u32,
        image_height: u32,
        principal_point: Pixel2,
    ) -> Result<Self, CameraError> {
        let camera = Self {
            forward_coeffs,
            inverse_coeffs,
            image_width,
            image_height,
            principal_point,
        };
        camera.validate()?;
        Ok(camera)
    }

    /// Builds a camera whose inverse polynomial is fitted from `forward_coeffs`
    /// with the default degree and sample count.
    pub fn with_fitted_inverse(
        forward_coeffs: Vec<f64>,
        image_width: u32,
        image_height: u32,
        principal_point: Pixel2,
    ) -> Result<Self, CameraError> {
        let inverse = fit_inverse_coeffs(
            &forward_coeffs,
            DEFAULT_INVERSE_DEGREE,
            DEFAULT_INVERSE_SAMPLES,
        )?;
        Self::new(
            forward_coeffs,
            inverse,
            image_width,
            image_height,
            principal_point,
        )
    }

    /// The 256x256 reference camera used throughout the tests and the harness:
    /// `f(rho) = 128 - (256 / pi) rho`, centered principal point, fitted inverse.
    pub fn reference_256() -> Self {
        Self::with_fitted_inverse(
            vec![128.0, -256.0 / std::f64::consts::PI],
            256,
            256,
            Pixel2::new(128.0, 128.0),
        )
        .expect("reference camera is valid")
    }

    fn validate(&self) -> Result<(), CameraError> {
        if self.forward_coeffs.is_empty() {
            return Err(CameraError::InvariantViolation(
                "forward_coeffs must be non-empty".into(),
            ));
        }
        if self.inverse_coeffs.is_empty() {
            return Err(CameraError::InvariantViolation(
                "inverse_coeffs must be non-empty".into(),
            ));
        }
        let all_finite = self
            .forward_coeffs
            .iter()
            .chain(self.inverse_coeffs.iter())
            .chain(self.principal_point.iter())
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(CameraError::InvariantViolation(
                "coefficients and principal point must be finite".into(),
            ));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(CameraError::InvariantViolation(
                "image size must be positive".into(),
            ));
        }
        if self.inverse_coeffs[0] <= 0.0 {
            return Err(CameraError::InvariantViolation(format!(
                "f'(0) must be positive, got {}",
                self.inverse_coeffs[0]
            )));
        }
        let (cx, cy) = (self.principal_point.x, self.principal_point.y);
        if !(0.0..=self.image_width as f64).contains(&cx)
            || !(0.0..=self.image_height as f64).contains(&cy)
        {
            return Err(CameraError::InvariantViolation(format!(
                "principal point ({cx}, {cy}) lies outside the {}x{} image",
                self.image_width, self.image_height
            )));
        }
        Ok(())
    }

    pub fn forward_coeffs(&self) -> &[f64] {
        &self.forward_coeffs
    }

    pub fn inverse_coeffs(&self) -> &[f64] {
        &self.inverse_coeffs
    }

    pub fn image_width(&self) -> u32 {
        self.image_width
    }

    pub fn image_height(&self) -> u32 {
        self.image_height
    }

    pub fn principal_point(&self) -> Pixel2 {
        self.principal_point
    }

    /// Projects a camera-frame point to absolute pixel coordinates.
    pub fn project(&self, p: &Point3) -> Result<Pixel2, CameraError> {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(CameraError::NonFiniteInput);
        }
        if p.norm_squared() == 0.0 {
            return Err(CameraError::ZeroNormPoint);
        }
        let planar = p.x.hypot(p.y);
        if planar < AXIS_EPS {
            return Ok(self.principal_point);
        }
        let rho = (p.z / planar).atan();
        let radius = eval_poly(&self.forward_coeffs, rho);
        Ok(self.principal_point + Pixel2::new(p.x, p.y) * (radius / planar))
    }

    /// Projection together with its 2x3 Jacobian with respect to `p`.
    ///
    /// On the optical axis the Jacobian is undefined; a zero matrix is returned
    /// there alongside the principal point.
    pub fn project_with_jacobian(
        &self,
        p: &Point3,
    ) -> Result<(Pixel2, Matrix2x3<f64>), CameraError> {
        let px = self.project(p)?;
        let planar = p.x.hypot(p.y);
        if planar < AXIS_EPS {
            return Ok((px, Matrix2x3::zeros()));
        }
        let rho = (p.z / planar).atan();
        let (f, df) = eval_poly_with_derivative(&self.forward_coeffs, rho);
        let denom = planar * planar + p.z * p.z;
        // d rho / d(x, y, z)
        let drho = Vector3::new(
            -p.z * p.x / (planar * denom),
            -p.z * p.y / (planar * denom),
            planar / denom,
        );
        let s3 = planar * planar * planar;
        let (x, y) = (p.x, p.y);
        let du = Vector3::new(
            df * drho.x * x / planar + f * y * y / s3,
            df * drho.y * x / planar - f * x * y / s3,
            df * drho.z * x / planar,
        );
        let dv = Vector3::new(
            df * drho.x * y / planar - f * x * y / s3,
            df * drho.y * y / planar + f * x * x / s3,
            df * drho.z * y / planar,
        );
        let jac = Matrix2x3::new(du.x, du.y, du.z, dv.x, dv.y, dv.z);
        Ok((px, jac))
    }

    /// Back-projects an absolute pixel to the point at distance `a` along its ray.
    pub fn unproject(&self, px: &Pixel2, a: f64) -> Result<Point3, CameraError> {
        if !(px.x.is_finite() && px.y.is_finite() && a.is_finite()) {
            return Err(CameraError::NonFiniteInput);
        }
        if a <= 0.0 {
            return Err(CameraError::NonPositiveDistance(a));
        }
        let centered = px - self.principal_point;
        let radius = centered.norm();
        let axial = eval_poly(&self.inverse_coeffs, radius);
        let dir = Point3::new(centered.x, centered.y, axial);
        Ok(dir * (a / dir.norm()))
    }

    /// Fits a fresh inverse polynomial for this camera's forward model.
    pub fn fit_inverse_poly(
        &self,
        degree: usize,
        num_samples: usize,
    ) -> Result<Vec<f64>, CameraError> {
        fit_inverse_coeffs(&self.forward_coeffs, degree, num_samples)
    }

    pub fn to_file(&self) -> CalibrationFile {
        CalibrationFile {
            forward_coeffs: self.forward_coeffs.clone(),
            inverse_coeffs: Some(self.inverse_coeffs.clone()),
            image_width: self.image_width,
            image_height: self.image_height,
            principal_point: [self.principal_point.x, self.principal_point.y],
        }
    }

    pub fn from_file(file: CalibrationFile) -> Result<Self, CameraError> {
        let pp = Pixel2::new(file.principal_point[0], file.principal_point[1]);
        match file.inverse_coeffs {
            Some(inverse) => Self::new(
                file.forward_coeffs,
                inverse,
                file.image_width,
                file.image_height,
                pp,
            ),
            None => {
                if file.forward_coeffs.is_empty() {
                    return Err(CameraError::InvariantViolation(
                        "forward_coeffs must be non-empty".into(),
                    ));
                }
                Self::with_fitted_inverse(
                    file.forward_coeffs,
                    file.image_width,
                    file.image_height,
                    pp,
                )
            }
        }
    }

    /// Parses a calibration from JSON text. `origin` labels error messages.
    pub fn from_json_str(text: &str, origin: &str) -> Result<Self, CameraError> {
        let file: CalibrationFile =
            serde_json::from_str(text).map_err(|e| CameraError::Parse {
                path: origin.to_string(),
                msg: e.to_string(),
            })?;
        Self::from_file(file)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("calibration serializes")
    }
}

/// Reads a calibration JSON file.
pub fn load_calibration(path: impl AsRef<Path>) -> Result<FisheyeCamera, CameraError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    FisheyeCamera::from_json_str(&text, &path.display().to_string())
}

/// Writes a calibration JSON file with full floating-point precision.
pub fn save_calibration(camera: &FisheyeCamera, path: impl AsRef<Path>) -> Result<(), CameraError> {
    let mut text = camera.to_json_string();
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Least-squares fit of the inverse polynomial `f'(r)` for a forward model.
///
/// Elevations are sampled at the midpoints of `num_samples` equal bins of
/// `(0, pi/2]`. For each sample the exact axial-over-radius ratio of the ray is
/// `tan(rho)`, so the fitted target is `f'(r) = r tan(rho)` with `r = f(rho)`.
/// The fit runs on `r / r_max` for conditioning and is rescaled afterwards.
pub fn fit_inverse_coeffs(
    forward_coeffs: &[f64],
    degree: usize,
    num_samples: usize,
) -> Result<Vec<f64>, CameraError> {
    if forward_coeffs.is_empty() {
        return Err(CameraError::InvalidFit("forward_coeffs is empty".into()));
    }
    if degree < 1 {
        return Err(CameraError::InvalidFit("degree must be at least 1".into()));
    }
    if num_samples < degree + 1 {
        return Err(CameraError::InvalidFit(format!(
            "need at least {} samples for degree {degree}, got {num_samples}",
            degree + 1
        )));
    }
    check_decreasing(forward_coeffs, num_samples)?;

    let step = FRAC_PI_2 / num_samples as f64;
    let samples: Vec<(f64, f64)> = (0..num_samples)
        .map(|k| {
            let rho = step * (k as f64 + 0.5);
            let r = eval_poly(forward_coeffs, rho);
            (r, r * rho.tan())
        })
        .collect();
    let r_max = samples.iter().fold(0.0_f64, |m, &(r, _)| m.max(r.abs()));
    if !(r_max > 0.0) || !r_max.is_finite() {
        return Err(CameraError::SingularNormalEquations);
    }

    let cols = degree + 1;
    let design = DMatrix::from_fn(num_samples, cols, |i, q| (samples[i].0 / r_max).powi(q as i32));
    let rhs = DVector::from_iterator(num_samples, samples.iter().map(|&(_, t)| t));
    let svd = design.svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if !(s_min > s_max * 1e-12) {
        return Err(CameraError::SingularNormalEquations);
    }
    let scaled = svd
        .solve(&rhs, 0.0)
        .map_err(|_| CameraError::SingularNormalEquations)?;
    let coeffs: Vec<f64> = scaled
        .iter()
        .enumerate()
        .map(|(q, c)| c / r_max.powi(q as i32))
        .collect();
    if coeffs[0] <= 0.0 {
        return Err(CameraError::InvariantViolation(format!(
            "fitted f'(0) = {} is not positive",
            coeffs[0]
        )));
    }
    Ok(coeffs)
}

fn check_decreasing(coeffs: &[f64], num_samples: usize) -> Result<(), CameraError> {
    let n = num_samples.max(64);
    let mut prev = eval_poly(coeffs, 0.0);
    for k in 1..=n {
        let rho = FRAC_PI_2 * k as f64 / n as f64;
        let value = eval_poly(coeffs, rho);
        if !(value < prev) {
            return Err(CameraError::NonMonotonicForwardPoly);
        }
        prev = value;
    }
    Ok(())
}
