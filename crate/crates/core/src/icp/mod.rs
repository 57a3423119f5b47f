//! Point-to-point ICP with a shrinking correspondence radius.

mod kdtree;
mod rigid;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub use kdtree::{brute_force_nearest, KdTree};
pub use rigid::best_rigid_transform;

use crate::error::{Error, Result};
use crate::pose::Pose;
use crate::sampling::{farthest_point_sample, PointCloud};

/// Surface points of a known object in its own frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectModel {
    pub points: Vec<Vector3<f64>>,
    pub class_id: usize,
}

impl ObjectModel {
    /// Requires at least three non-collinear points.
    pub fn new(points: Vec<Vector3<f64>>, class_id: usize) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::Degenerate(format!("model has {} points, need 3", points.len())));
        }
        let a = points[0];
        let far = points
            .iter()
            .map(|p| (p - a).norm())
            .fold(0.0, f64::max);
        let b = points.iter().copied().max_by(|p, q| (p - a).norm().total_cmp(&(q - a).norm())).unwrap();
        let dir = b - a;
        let off_line = points.iter().map(|p| (p - a).cross(&dir).norm()).fold(0.0, f64::max);
        if far == 0.0 || off_line <= 1e-12 * far * far {
            return Err(Error::Degenerate("model points are collinear".into()));
        }
        Ok(ObjectModel { points, class_id })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Largest pairwise distance.
    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for (i, p) in self.points.iter().enumerate() {
            for q in &self.points[i + 1..] {
                d = d.max((p - q).norm_squared());
            }
        }
        d.sqrt()
    }

    pub fn cloud(&self) -> PointCloud {
        PointCloud::new(self.points.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Correspondence radius of the first iteration, meters.
    pub initial_radius: f64,
    /// Multiplier applied to the radius after every iteration.
    pub radius_decay: f64,
    pub min_correspondences: usize,
    /// Stop once an update moves less than this (meters and radians).
    pub convergence_eps: f64,
    /// Larger models are reduced to this many points by FPS.
    pub max_model_points: usize,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            max_iterations: 10,
            initial_radius: 0.01,
            radius_decay: 0.9,
            min_correspondences: 3,
            convergence_eps: 1e-7,
            max_model_points: 1024,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_radius > 0.0) {
            return Err(Error::InvalidArgument(format!("ICP radius must be positive, got {}", self.initial_radius)));
        }
        if !(self.radius_decay > 0.0 && self.radius_decay <= 1.0) {
            return Err(Error::InvalidArgument(format!("ICP decay must be in (0, 1], got {}", self.radius_decay)));
        }
        Ok(())
    }
}

/// One ICP iteration: the radius used, the RMS distance of the accepted
/// correspondences and the `(model, observed)` index pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct IcpIteration {
    pub radius: f64,
    pub rms: f64,
    pub matches: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IcpStop {
    MaxIterations,
    Converged,
    /// Fewer than `min_correspondences` matches; the pose is left as is.
    Starved,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub pose: Pose,
    pub iterations: Vec<IcpIteration>,
    pub stop: IcpStop,
}

impl IcpResult {
    pub fn residuals(&self) -> Vec<f64> {
        self.iterations.iter().map(|it| it.rms).collect()
    }
}

/// Closest point of `target` within `radius`.
pub fn nearest_neighbor(query: &Vector3<f64>, target: &KdTree, radius: f64) -> Option<(usize, f64)> {
    target.nearest_within(query, radius)
}

/// Refines `init` so that the model, transformed by the returned pose,
/// lies on the observed cloud. Correspondences run model → observed.
pub fn icp_refine(model: &ObjectModel, observed: &PointCloud, init: Pose, cfg: &IcpConfig) -> Result<IcpResult> {
    cfg.validate()?;
    if model.is_empty() || observed.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let model_points = if model.len() > cfg.max_model_points {
        let idx = farthest_point_sample(&model.cloud(), cfg.max_model_points, 0)?;
        idx.iter().map(|&i| model.points[i]).collect()
    } else {
        model.points.clone()
    };
    let tree = KdTree::new(&observed.points);

    let mut pose = init;
    let mut iterations = Vec::new();
    let mut radius = cfg.initial_radius;
    let mut stop = IcpStop::MaxIterations;

    for _ in 0..cfg.max_iterations {
        let moved = pose.transform_all(&model_points);
        let mut matches = Vec::new();
        let mut src = Vec::new();
        let mut dst = Vec::new();
        let mut sq = 0.0;
        for (i, p) in moved.iter().enumerate() {
            if let Some((j, d)) = tree.nearest_within(p, radius) {
                matches.push((i, j));
                src.push(*p);
                dst.push(observed.points[j]);
                sq += d * d;
            }
        }
        if matches.len() < cfg.min_correspondences.max(3) {
            stop = IcpStop::Starved;
            break;
        }
        let rms = (sq / matches.len() as f64).sqrt();
        iterations.push(IcpIteration { radius, rms, matches });

        let delta = match best_rigid_transform(&src, &dst) {
            Ok(d) => d,
            Err(_) => {
                stop = IcpStop::Degenerate;
                break;
            }
        };
        pose = delta.compose(&pose);
        radius *= cfg.radius_decay;

        if delta.translation.norm() < cfg.convergence_eps && delta.rotation.angle() < cfg.convergence_eps {
            stop = IcpStop::Converged;
            break;
        }
    }
    Ok(IcpResult { pose, iterations, stop })
}
