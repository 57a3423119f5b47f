//! Pinhole camera intrinsics and projection.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraIntrinsics {
    /// A 640×480 sensor with a 525 px focal length.
    fn default() -> Self {
        CameraIntrinsics {
            fx: 525.0,
            fy: 525.0,
            cx: 319.5,
            cy: 239.5,
            width: 640,
            height: 480,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("image size must be nonzero".into()));
        }
        Ok(())
    }

    /// Continuous image coordinates `(u, v)` of a camera-frame point.
    pub fn project(&self, p: &Vector3<f64>) -> Result<(f64, f64)> {
        if !(p.z > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "point ({}, {}, {}) is not in front of the camera",
                p.x, p.y, p.z
            )));
        }
        Ok((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Integer pixel containing the projection, or `None` outside the image.
    pub fn pixel(&self, p: &Vector3<f64>) -> Result<Option<(usize, usize)>> {
        let (u, v) = self.project(p)?;
        let (u, v) = (u.round(), v.round());
        if u < 0.0 || v < 0.0 || u >= self.width as f64 || v >= self.height as f64 {
            return Ok(None);
        }
        Ok(Some((u as usize, v as usize)))
    }

    /// Inverse of [`project`](Self::project) at depth `z`.
    pub fn backproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z)
    }
}
