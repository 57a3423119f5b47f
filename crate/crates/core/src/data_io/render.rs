use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::icp::ObjectModel;
use crate::pose::Pose;
use crate::sampling::PointCloud;

/// Synthetic depth-sensor settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    /// Standard deviation of the isotropic Gaussian noise added to surviving points, meters.
    pub noise_sigma: f64,
    /// Probability that a rectangular occluder covers part of the object.
    pub occluder_probability: f64,
    /// Largest fraction of the object's image extent an occluder may cover.
    pub occluder_max_coverage: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            noise_sigma: 0.003,
            occluder_probability: 0.25,
            occluder_max_coverage: 0.6,
        }
    }
}

/// Axis-aligned occluding rectangle in pixel coordinates (inclusive bounds).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occluder {
    pub u_min: f64,
    pub u_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl Occluder {
    pub fn covers(&self, u: usize, v: usize) -> bool {
        let (u, v) = (u as f64, v as f64);
        u >= self.u_min && u <= self.u_max && v >= self.v_min && v <= self.v_max
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub cloud: PointCloud,
    /// Model indices of the surviving points, in model order.
    pub visible: Vec<usize>,
    /// Pixels of the full model projection.
    pub nu: usize,
    /// Projection pixels not hidden by the occluder.
    pub lambda: usize,
    pub occlusion: f64,
}

/// Splat radius relative to the mean point spacing; large enough to close
/// the gaps between neighboring surface samples.
const SPLAT_SCALE: f64 = 1.5;

/// Mean distance from each model point to its nearest other model point.
pub fn model_spacing(model: &ObjectModel) -> f64 {
    let pts = &model.points;
    let total: f64 = pts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            pts.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    total / pts.len() as f64
}

/// Observed point cloud of `model` under `pose`: the points that win the
/// z-buffer of their own pixel, plus Gaussian noise.
pub fn render_partial_view<R: Rng + ?Sized>(
    model: &ObjectModel,
    pose: &Pose,
    cam: &CameraIntrinsics,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<PointCloud> {
    let spacing = model_spacing(model);
    render_view(model, pose, cam, spacing, None, noise_sigma, rng).map(|v| v.cloud)
}

/// Z-buffered rendering with point splats about 1.5 `spacing` wide and an
/// optional occluder.
///
/// Each model point is drawn as a disk so that sparse front surfaces hide the
/// points behind them. A point survives when it projects into the image,
/// outside the occluder, and no splat in its center pixel is more than
/// `spacing` nearer.
pub fn render_view<R: Rng + ?Sized>(
    model: &ObjectModel,
    pose: &Pose,
    cam: &CameraIntrinsics,
    spacing: f64,
    occluder: Option<Occluder>,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<RenderedView> {
    cam.validate()?;
    if model.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise sigma must be non-negative, got {noise_sigma}")));
    }
    let pts = pose.transform_all(&model.points);
    let mut proj = Vec::with_capacity(pts.len());
    for p in &pts {
        proj.push(cam.project(p)?);
    }

    let (w, h) = (cam.width as i64, cam.height as i64);
    let mut zbuf = vec![f64::INFINITY; cam.width * cam.height];
    for (p, &(u, v)) in pts.iter().zip(&proj) {
        let r = SPLAT_SCALE * spacing * cam.fx.max(cam.fy) / p.z;
        let (u0, u1) = ((u - r).round() as i64, (u + r).round() as i64);
        let (v0, v1) = ((v - r).round() as i64, (v + r).round() as i64);
        for pv in v0.max(0)..=v1.min(h - 1) {
            for pu in u0.max(0)..=u1.min(w - 1) {
                let (du, dv) = (pu as f64 - u, pv as f64 - v);
                if du * du + dv * dv > r * r && !(pu == u.round() as i64 && pv == v.round() as i64) {
                    continue;
                }
                let i = pv as usize * cam.width + pu as usize;
                if p.z < zbuf[i] {
                    zbuf[i] = p.z;
                }
            }
        }
    }

    let mut projection = std::collections::HashSet::new();
    let mut unoccluded = std::collections::HashSet::new();
    let mut visible = Vec::new();
    for (i, p) in pts.iter().enumerate() {
        let Some((u, v)) = cam.pixel(p)? else { continue };
        projection.insert((u, v));
        if occluder.is_some_and(|o| o.covers(u, v)) {
            continue;
        }
        unoccluded.insert((u, v));
        if p.z <= zbuf[v * cam.width + u] + spacing {
            visible.push(i);
        }
    }
    let nu = projection.len();
    let lambda = unoccluded.len();
    if nu == 0 {
        return Err(Error::InvalidArgument("object projects outside the image".into()));
    }
    let occlusion = 1.0 - lambda as f64 / nu as f64;

    let mut cloud: Vec<Vector3<f64>> = visible.iter().map(|&i| pts[i]).collect();
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).expect("finite sigma");
        for p in &mut cloud {
            *p += Vector3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
        }
    }
    Ok(RenderedView {
        cloud: PointCloud::new(cloud),
        visible,
        nu,
        lambda,
        occlusion,
    })
}

/// A rectangle entering the object's image bounding box from a random side
/// and covering up to `max_coverage` of its extent.
pub fn random_occluder<R: Rng + ?Sized>(
    model: &ObjectModel,
    pose: &Pose,
    cam: &CameraIntrinsics,
    max_coverage: f64,
    rng: &mut R,
) -> Result<Occluder> {
    let mut u_min = f64::INFINITY;
    let mut u_max = f64::NEG_INFINITY;
    let mut v_min = f64::INFINITY;
    let mut v_max = f64::NEG_INFINITY;
    for p in pose.transform_all(&model.points) {
        let (u, v) = cam.project(&p)?;
        u_min = u_min.min(u.round());
        u_max = u_max.max(u.round());
        v_min = v_min.min(v.round());
        v_max = v_max.max(v.round());
    }
    let f = rng.random_range(0.0..=max_coverage.clamp(0.0, 1.0));
    let (du, dv) = ((u_max - u_min) * f, (v_max - v_min) * f);
    let mut o = Occluder { u_min: f64::NEG_INFINITY, u_max: f64::INFINITY, v_min: f64::NEG_INFINITY, v_max: f64::INFINITY };
    match rng.random_range(0..4) {
        0 => o.u_max = u_min + du,
        1 => o.u_min = u_max - du,
        2 => o.v_max = v_min + dv,
        _ => o.v_min = v_max - dv,
    }
    Ok(o)
}
