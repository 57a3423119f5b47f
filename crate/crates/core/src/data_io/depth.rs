use nalgebra::Vector3;

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::sampling::PointCloud;

/// Depth image with a per-pixel instance mask. Row-major, `height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    /// Meters; 0 marks an invalid reading.
    pub depth: Vec<f64>,
    /// Class label per pixel; 0 is background.
    pub mask: Vec<u16>,
    pub intrinsics: CameraIntrinsics,
}

impl DepthFrame {
    pub fn new(depth: Vec<f64>, mask: Vec<u16>, intrinsics: CameraIntrinsics) -> Result<Self> {
        intrinsics.validate()?;
        let pixels = intrinsics.width * intrinsics.height;
        if depth.len() != pixels || mask.len() != pixels {
            return Err(Error::Shape(format!(
                "{}×{} frame needs {pixels} pixels, got depth {} and mask {}",
                intrinsics.height,
                intrinsics.width,
                depth.len(),
                mask.len()
            )));
        }
        if let Some(z) = depth.iter().find(|z| !(**z >= 0.0)) {
            return Err(Error::InvalidArgument(format!("negative or NaN depth {z}")));
        }
        Ok(DepthFrame { depth, mask, intrinsics })
    }

    pub fn empty(intrinsics: CameraIntrinsics) -> Self {
        let pixels = intrinsics.width * intrinsics.height;
        DepthFrame { depth: vec![0.0; pixels], mask: vec![0; pixels], intrinsics }
    }

    pub fn index(&self, u: usize, v: usize) -> usize {
        v * self.intrinsics.width + u
    }
}

/// Camera-frame points of every valid pixel labelled `label`.
pub fn backproject(frame: &DepthFrame, label: u16) -> Result<PointCloud> {
    let cam = &frame.intrinsics;
    let mut present = false;
    let mut points = Vec::new();
    for v in 0..cam.height {
        for u in 0..cam.width {
            let i = frame.index(u, v);
            if frame.mask[i] != label {
                continue;
            }
            present = true;
            let z = frame.depth[i];
            if z > 0.0 {
                points.push(cam.backproject(u as f64, v as f64, z));
            }
        }
    }
    if !present {
        return Err(Error::InvalidArgument(format!("label {label} not present in mask")));
    }
    if points.is_empty() {
        return Err(Error::InvalidArgument(format!("label {label} has no valid depth")));
    }
    Ok(PointCloud::new(points))
}

/// Writes each point into its pixel, keeping the nearest per pixel.
pub fn rasterize(frame: &mut DepthFrame, points: &[Vector3<f64>], label: u16) -> Result<()> {
    for p in points {
        if let Some((u, v)) = frame.intrinsics.pixel(p)? {
            let i = frame.index(u, v);
            if frame.depth[i] == 0.0 || p.z < frame.depth[i] {
                frame.depth[i] = p.z;
                frame.mask[i] = label;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics { fx: 500.0, fy: 500.0, cx: 4.0, cy: 3.0, width: 9, height: 7 }
    }

    #[test]
    fn principal_pixel() {
        let mut frame = DepthFrame::empty(cam());
        let i = frame.index(4, 3);
        frame.depth[i] = 2.0;
        frame.mask[i] = 1;
        assert_eq!(backproject(&frame, 1).unwrap().points, vec![Vector3::new(0.0, 0.0, 2.0)]);
    }

    #[test]
    fn unit_offset_pixel() {
        let c = CameraIntrinsics { fx: 2.0, fy: 2.0, cx: 1.0, cy: 1.0, width: 4, height: 3 };
        let mut frame = DepthFrame::empty(c);
        let i = frame.index(3, 1);
        frame.depth[i] = 1.0;
        frame.mask[i] = 2;
        assert_eq!(backproject(&frame, 2).unwrap().points, vec![Vector3::new(1.0, 0.0, 1.0)]);
    }

    #[test]
    fn reprojects_to_source_pixels() {
        let mut frame = DepthFrame::empty(cam());
        for v in 0..7 {
            for u in 0..9 {
                if (u + v) % 3 == 0 {
                    let i = frame.index(u, v);
                    frame.depth[i] = 0.5 + 0.1 * u as f64;
                    frame.mask[i] = 3;
                }
            }
        }
        for p in backproject(&frame, 3).unwrap().points {
            let (u, v) = frame.intrinsics.pixel(&p).unwrap().unwrap();
            let i = frame.index(u, v);
            assert_eq!(frame.mask[i], 3);
            assert_eq!(frame.depth[i], p.z);
        }
    }

    #[test]
    fn errors() {
        let mut frame = DepthFrame::empty(cam());
        assert!(backproject(&frame, 1).is_err());
        let i = frame.index(0, 0);
        frame.mask[i] = 1;
        assert!(backproject(&frame, 1).is_err());
        assert!(DepthFrame::new(vec![0.0; 3], vec![0; 63], cam()).is_err());
        assert!(DepthFrame::new(vec![-1.0; 63], vec![0; 63], cam()).is_err());
    }

    #[test]
    fn rasterize_keeps_nearest() {
        let mut frame = DepthFrame::empty(cam());
        rasterize(&mut frame, &[Vector3::new(0.0, 0.0, 2.0), Vector3::new(0.0, 0.0, 1.0)], 1).unwrap();
        let i = frame.index(4, 3);
        assert_eq!(frame.depth[i], 1.0);
    }
}
