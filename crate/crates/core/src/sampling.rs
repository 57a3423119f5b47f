//! Farthest point sampling and fixed-size resampling of point clouds.

use nalgebra::Vector3;
use rand::Rng;

use crate::error::{Error, Result};

/// Unordered set of 3-d points in meters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        PointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.iter().all(|c| c.is_finite()))
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        let sum: Vector3<f64> = self.points.iter().sum();
        Some(sum / self.points.len() as f64)
    }

    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud::new(indices.iter().map(|&i| self.points[i]).collect())
    }
}

/// Greedy farthest point sampling starting at `seed_index`.
///
/// Each pick maximizes the distance to the nearest already-selected point;
/// ties go to the lowest index. When `n` exceeds the cloud size the full
/// FPS order is repeated cyclically.
pub fn farthest_point_sample(cloud: &PointCloud, n: usize, seed_index: usize) -> Result<Vec<usize>> {
    let m = cloud.len();
    if m == 0 {
        return Err(Error::EmptyCloud);
    }
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    if seed_index >= m {
        return Err(Error::InvalidArgument(format!(
            "seed index {seed_index} out of range for {m} points"
        )));
    }

    let picks = n.min(m);
    let pts = &cloud.points;
    let mut min_d2 = vec![f64::INFINITY; m];
    let mut selected = vec![false; m];
    let mut order = Vec::with_capacity(picks);
    let mut current = seed_index;
    // O(picks · m): the hot loop of dataset preparation.
    loop {
        order.push(current);
        selected[current] = true;
        if order.len() == picks {
            break;
        }
        let c = pts[current];
        let mut best = usize::MAX;
        let mut best_d = -1.0;
        for i in 0..m {
            let d = (pts[i] - c).norm_squared();
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            if !selected[i] && min_d2[i] > best_d {
                best_d = min_d2[i];
                best = i;
            }
        }
        current = best;
    }

    Ok((0..n).map(|i| order[i % picks]).collect())
}

/// Exactly `n` points: FPS when the cloud is large enough, otherwise every
/// point plus uniformly drawn duplicates.
pub fn resample_to_n<R: Rng + ?Sized>(cloud: &PointCloud, n: usize, rng: &mut R) -> Result<PointCloud> {
    let m = cloud.len();
    if m == 0 {
        return Err(Error::EmptyCloud);
    }
    if m >= n {
        let idx = farthest_point_sample(cloud, n, 0)?;
        return Ok(cloud.select(&idx));
    }
    let mut points = cloud.points.clone();
    points.extend((m..n).map(|_| cloud.points[rng.random_range(0..m)]));
    Ok(PointCloud::new(points))
}
