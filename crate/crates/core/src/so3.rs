//! Rotation representations and the geodesic metric on SO(3).
//!
//! Three representations are used across the crate: axis-angle vectors
//! (the regression target of the rotation network), rotation matrices, and
//! unit quaternions (only for the quaternion-head ablation).

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this angle the Rodrigues coefficients switch to Taylor series.
pub const TAYLOR_THRESHOLD: f64 = 1e-4;

/// Distance of the `arccos` argument from ±1.
pub const ACOS_CLAMP_EPS: f64 = 1e-7;

const ORTHO_TOLERANCE: f64 = 1e-4;

/// Axis-angle rotation: direction is the axis, norm is the angle in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisAngle(pub Vector3<f64>);

/// A 3×3 proper orthogonal matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

/// Quaternion `(w, x, y, z)`; not necessarily normalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl AxisAngle {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        AxisAngle(Vector3::new(x, y, z))
    }

    pub fn zero() -> Self {
        AxisAngle(Vector3::zeros())
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.0.x, self.0.y, self.0.z]
    }

    /// Maps the angle into `[0, π]`, flipping the axis when the angle is
    /// reflected. At exactly `π` the first nonzero axis component is made
    /// positive.
    pub fn canonical(&self) -> Self {
        let theta = self.angle();
        if theta == 0.0 {
            return *self;
        }
        let axis = self.0 / theta;
        let mut wrapped = theta % (2.0 * PI);
        let mut axis = axis;
        if wrapped > PI {
            wrapped = 2.0 * PI - wrapped;
            axis = -axis;
        }
        if wrapped == PI {
            axis = positive_first_component(axis);
        }
        AxisAngle(axis * wrapped)
    }

    pub fn to_matrix(&self) -> RotationMatrix {
        exp_map(self)
    }
}

fn positive_first_component(v: Vector3<f64>) -> Vector3<f64> {
    match v.iter().find(|c| **c != 0.0) {
        Some(c) if *c < 0.0 => -v,
        _ => v,
    }
}

impl RotationMatrix {
    /// Validates orthogonality and determinant within `1e-4`.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let ortho = (m.transpose() * m - Matrix3::identity()).norm();
        let det = m.determinant();
        if !ortho.is_finite() || ortho > ORTHO_TOLERANCE || (det - 1.0).abs() > ORTHO_TOLERANCE {
            return Err(Error::InvalidRotation(format!(
                "|RᵀR − I|_F = {ortho:.3e}, det = {det:.6}"
            )));
        }
        Ok(RotationMatrix(m))
    }

    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        RotationMatrix(self.0.transpose())
    }

    pub fn compose(&self, other: &RotationMatrix) -> Self {
        RotationMatrix(self.0 * other.0)
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn to_axis_angle(&self) -> AxisAngle {
        log_map_unchecked(&self.0)
    }
}

impl Quaternion {
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quaternion { w, x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

/// The cross-product matrix: `skew(r) * v == r × v`.
pub fn skew(r: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -r.z, r.y, //
        r.z, 0.0, -r.x, //
        -r.y, r.x, 0.0,
    )
}

/// `sin θ / θ` and `(1 − cos θ) / θ²`.
pub fn rodrigues_coefficients(theta: f64) -> (f64, f64) {
    if theta < TAYLOR_THRESHOLD {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        let half = (theta / 2.0).sin();
        (theta.sin() / theta, 2.0 * half * half / (theta * theta))
    }
}

/// Rodrigues' formula `I + a K + b K²` with `K = skew(r)`.
pub fn exp_map(r: &AxisAngle) -> RotationMatrix {
    let theta = r.angle();
    let (a, b) = rodrigues_coefficients(theta);
    let k = skew(&r.0);
    RotationMatrix(Matrix3::identity() + k * a + k * k * b)
}

/// Inverse of [`exp_map`]; the result is canonical (`θ ∈ [0, π]`).
pub fn log_map(r: &RotationMatrix) -> Result<AxisAngle> {
    RotationMatrix::new(r.0)?;
    Ok(log_map_unchecked(&r.0))
}

fn log_map_unchecked(m: &Matrix3<f64>) -> AxisAngle {
    let vee = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let sin_theta = 0.5 * vee.norm();
    let cos_theta = 0.5 * (m.trace() - 1.0);
    let theta = sin_theta.atan2(cos_theta);

    if theta < 1e-3 {
        // θ / sin θ ≈ 1 + θ²/6
        return AxisAngle(vee * 0.5 * (1.0 + theta * theta / 6.0));
    }
    if cos_theta > -0.9 {
        return AxisAngle(vee * (theta / (2.0 * sin_theta)));
    }

    // Near a half turn: sym(R) = cos θ I + (1 − cos θ) u uᵀ.
    let sym = (m + m.transpose()) * 0.5;
    let outer = (sym - Matrix3::identity() * cos_theta) / (1.0 - cos_theta);
    let i = (0..3)
        .max_by(|&a, &b| outer[(a, a)].total_cmp(&outer[(b, b)]))
        .unwrap_or(0);
    let ui = outer[(i, i)].max(0.0).sqrt();
    let mut axis = Vector3::from_fn(|j, _| if j == i { ui } else { outer[(i, j)] / ui });
    axis.normalize_mut();
    if axis.dot(&vee) < 0.0 {
        axis = -axis;
    }
    AxisAngle(axis * theta).canonical()
}

/// Angle of `R1 R2ᵀ`, clamped away from the `arccos` singularities.
pub fn geodesic_distance(r1: &RotationMatrix, r2: &RotationMatrix) -> f64 {
    // trace(R1 R2ᵀ) = Σ_ij R1_ij R2_ij, an order that is symmetric in the arguments
    let trace: f64 = r1.0.iter().zip(r2.0.iter()).map(|(a, b)| a * b).sum();
    let c = ((trace - 1.0) * 0.5).clamp(-1.0 + ACOS_CLAMP_EPS, 1.0 - ACOS_CLAMP_EPS);
    c.acos()
}

/// Normalizes `q` and converts it to a canonical axis-angle vector.
pub fn quat_to_axis_angle(q: &Quaternion) -> Result<AxisAngle> {
    let n = q.norm();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroQuaternion);
    }
    let sign = if q.w < 0.0 { -1.0 } else { 1.0 };
    let w = sign * q.w / n;
    let v = Vector3::new(q.x, q.y, q.z) * (sign / n);
    let vn = v.norm();
    if vn < 1e-8 {
        return Ok(AxisAngle::zero());
    }
    let theta = 2.0 * w.clamp(-1.0, 1.0).acos();
    Ok(AxisAngle(v * (theta / vn)).canonical())
}

/// Unit quaternion with non-negative scalar part.
pub fn axis_angle_to_quat(r: &AxisAngle) -> Quaternion {
    let theta = r.angle();
    let half = 0.5 * theta;
    // sin(θ/2)/θ, finite at zero
    let s = if theta < TAYLOR_THRESHOLD {
        0.5 - theta * theta / 48.0
    } else {
        half.sin() / theta
    };
    Quaternion::new(half.cos(), r.0.x * s, r.0.y * s, r.0.z * s)
}

/// Haar-uniform rotation from a normalized 4-d Gaussian.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> AxisAngle {
    loop {
        let q = Quaternion::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if q.norm() > 1e-12 {
            if let Ok(r) = quat_to_axis_angle(&q) {
                return r;
            }
        }
    }
}

/// Rotation by `angle` about the unit vector `axis`.
pub fn rotation_about(axis: &Vector3<f64>, angle: f64) -> AxisAngle {
    AxisAngle(axis.normalize() * angle)
}
