use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::so3::{AxisAngle, RotationMatrix};

/// Rigid transform from object to camera coordinates: `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: AxisAngle,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: AxisAngle, translation: Vector3<f64>) -> Self {
        Pose {
            rotation: rotation.canonical(),
            translation,
        }
    }

    pub fn identity() -> Self {
        Pose {
            rotation: AxisAngle::zero(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_matrix(rotation: &RotationMatrix, translation: Vector3<f64>) -> Self {
        Pose::new(rotation.to_axis_angle(), translation)
    }

    pub fn rotation_matrix(&self) -> RotationMatrix {
        self.rotation.to_matrix()
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix().rotate(p) + self.translation
    }

    pub fn transform_all(&self, points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        let r = self.rotation_matrix();
        points.iter().map(|p| r.rotate(p) + self.translation).collect()
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        let r = self.rotation_matrix();
        let rot = r.compose(&other.rotation_matrix());
        Pose::from_matrix(&rot, r.rotate(&other.translation) + self.translation)
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation_matrix().transpose();
        Pose::from_matrix(&rt, -rt.rotate(&self.translation))
    }
}
