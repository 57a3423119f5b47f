//! AD / ADS distances, threshold accuracy, AUC and occlusion binning.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::icp::{KdTree, ObjectModel};
use crate::pose::Pose;

/// Default upper threshold of the accuracy curve, meters.
pub const AUC_MAX_THRESHOLD: f64 = 0.1;
/// Threshold of the "< 1 cm" accuracy.
pub const CM_THRESHOLD: f64 = 0.01;
/// Number of 10 %-wide occlusion bins, covering `[0, 0.8)`.
pub const OCCLUSION_BINS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub class_id: usize,
    pub gt: Pose,
    pub est: Pose,
    pub occlusion: f64,
}

impl EvalRecord {
    pub fn new(class_id: usize, gt: Pose, est: Pose, occlusion: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&occlusion) {
            return Err(Error::InvalidArgument(format!("occlusion {occlusion} outside [0, 1]")));
        }
        Ok(EvalRecord { class_id, gt, est, occlusion })
    }
}

/// Mean distance between model points under the two poses, point by point.
pub fn average_distance(model: &ObjectModel, gt: &Pose, est: &Pose) -> Result<f64> {
    if model.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let a = gt.transform_all(&model.points);
    let b = est.transform_all(&model.points);
    let sum: f64 = a.iter().zip(&b).map(|(p, q)| (p - q).norm()).sum();
    Ok(sum / model.len() as f64)
}

/// Mean distance from each ground-truth point to the closest estimated point.
pub fn average_distance_symmetric(model: &ObjectModel, gt: &Pose, est: &Pose) -> Result<f64> {
    if model.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let a = gt.transform_all(&model.points);
    let tree = KdTree::new(&est.transform_all(&model.points));
    let sum: f64 = a
        .iter()
        .map(|p| tree.nearest(p).map(|(_, d)| d).unwrap_or(0.0))
        .sum();
    Ok(sum / model.len() as f64)
}

/// Fraction of errors strictly below `tau`.
pub fn accuracy_at_threshold(errors: &[f64], tau: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("no errors to score".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be positive, got {tau}")));
    }
    let hits = errors.iter().filter(|&&e| e < tau).count();
    Ok(hits as f64 / errors.len() as f64)
}

/// Area under the accuracy-vs-threshold curve on `[0, tau_max]`, in percent.
pub fn auc(errors: &[f64], tau_max: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("no errors to score".into()));
    }
    if !(tau_max > 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be positive, got {tau_max}")));
    }
    let area: f64 = errors.iter().map(|&e| 1.0 - e.max(0.0).min(tau_max) / tau_max).sum();
    Ok(100.0 * area / errors.len() as f64)
}

/// `1 − λ/ν`: the hidden fraction of the object's full projection.
pub fn occlusion_factor(lambda_px: usize, nu_px: usize) -> Result<f64> {
    if nu_px == 0 {
        return Err(Error::InvalidArgument("full projection covers no pixels".into()));
    }
    if lambda_px > nu_px {
        return Err(Error::InvalidArgument(format!(
            "visible pixels {lambda_px} exceed projected pixels {nu_px}"
        )));
    }
    Ok(1.0 - lambda_px as f64 / nu_px as f64)
}

/// Distinct pixels hit by the model points under `pose`, ignoring those that
/// fall outside the image.
pub fn project_visible_pixel_count(model: &ObjectModel, pose: &Pose, cam: &CameraIntrinsics) -> Result<usize> {
    projected_pixels(&model.points, pose, cam).map(|px| px.len())
}

pub(crate) fn projected_pixels(
    points: &[nalgebra::Vector3<f64>],
    pose: &Pose,
    cam: &CameraIntrinsics,
) -> Result<HashSet<(usize, usize)>> {
    let mut pixels = HashSet::new();
    for p in pose.transform_all(points) {
        if let Some(px) = cam.pixel(&p)? {
            pixels.insert(px);
        }
    }
    Ok(pixels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// `None` for an empty bin.
    pub accuracy: Option<f64>,
}

/// Accuracy at `tau` of the ADS errors, grouped into `[0.1·i, 0.1·(i+1))`
/// occlusion bins. `errors[i]` belongs to `records[i]`.
pub fn occlusion_binned_report(records: &[EvalRecord], errors: &[f64], tau: f64) -> Result<Vec<OcclusionBin>> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to bin".into()));
    }
    if records.len() != errors.len() {
        return Err(Error::Shape(format!(
            "{} records but {} errors",
            records.len(),
            errors.len()
        )));
    }
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); OCCLUSION_BINS];
    for (r, &e) in records.iter().zip(errors) {
        if let Some(b) = occlusion_bin(r.occlusion) {
            groups[b].push(e);
        }
    }
    groups
        .into_iter()
        .enumerate()
        .map(|(i, g)| {
            let accuracy = if g.is_empty() { None } else { Some(accuracy_at_threshold(&g, tau)?) };
            Ok(OcclusionBin {
                lower: i as f64 / 10.0,
                upper: (i + 1) as f64 / 10.0,
                count: g.len(),
                accuracy,
            })
        })
        .collect()
}

/// Bin index of an occlusion factor, `None` at 0.8 and above.
pub fn occlusion_bin(occlusion: f64) -> Option<usize> {
    // integer comparison keeps 0.1, 0.2, ... exactly on their bin's lower edge
    (0..OCCLUSION_BINS).find(|&i| occlusion * 10.0 >= i as f64 && occlusion * 10.0 < (i + 1) as f64)
}

/// ADS errors for a batch of records.
pub fn ads_errors(records: &[EvalRecord], models: &[ObjectModel]) -> Result<Vec<f64>> {
    records
        .iter()
        .map(|r| average_distance_symmetric(model_for(models, r.class_id)?, &r.gt, &r.est))
        .collect()
}

/// AD errors for a batch of records.
pub fn ad_errors(records: &[EvalRecord], models: &[ObjectModel]) -> Result<Vec<f64>> {
    records
        .iter()
        .map(|r| average_distance(model_for(models, r.class_id)?, &r.gt, &r.est))
        .collect()
}

fn model_for(models: &[ObjectModel], class_id: usize) -> Result<&ObjectModel> {
    models
        .iter()
        .find(|m| m.class_id == class_id)
        .ok_or_else(|| Error::InvalidArgument(format!("no model for class {class_id}")))
}
