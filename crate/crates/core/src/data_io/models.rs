use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::icp::ObjectModel;
use crate::sampling::{farthest_point_sample, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrimitiveKind {
    Box,
    /// Diameter `dims.x`, height `dims.z`, axis along z.
    Cylinder,
    /// Bumpy ellipsoid with semi-axes `dims / 2` and no rotational symmetry.
    AsymmetricBlob,
}

/// Surface samples are drawn this many times denser than requested and
/// thinned with farthest point sampling for even coverage.
const OVERSAMPLE: usize = 4;

/// `m` surface points of a primitive solid centered at the origin.
pub fn generate_primitive_model<R: Rng + ?Sized>(
    kind: PrimitiveKind,
    dims: Vector3<f64>,
    m: usize,
    class_id: usize,
    rng: &mut R,
) -> Result<ObjectModel> {
    if m < 3 {
        return Err(Error::InvalidArgument(format!("model needs at least 3 points, got {m}")));
    }
    if dims.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::InvalidArgument(format!("dimensions must be positive, got {dims:?}")));
    }
    let raw = OVERSAMPLE * m;
    let dense: Vec<Vector3<f64>> = match kind {
        PrimitiveKind::Box => (0..raw).map(|_| box_surface_point(dims, rng)).collect(),
        PrimitiveKind::Cylinder => (0..raw).map(|_| cylinder_surface_point(dims, rng)).collect(),
        PrimitiveKind::AsymmetricBlob => {
            let shape = BlobShape::random(rng);
            (0..raw).map(|_| shape.surface_point(dims, rng)).collect()
        }
    };
    let cloud = PointCloud::new(dense);
    let idx = farthest_point_sample(&cloud, m, 0)?;
    ObjectModel::new(cloud.select(&idx).points, class_id)
}

fn box_surface_point<R: Rng + ?Sized>(dims: Vector3<f64>, rng: &mut R) -> Vector3<f64> {
    let h = dims / 2.0;
    let areas = [dims.y * dims.z, dims.x * dims.z, dims.x * dims.y];
    let total: f64 = areas.iter().sum();
    let mut pick = rng.random_range(0.0..total);
    let mut axis = 2;
    for (i, a) in areas.iter().enumerate() {
        if pick < *a {
            axis = i;
            break;
        }
        pick -= a;
    }
    let mut p = Vector3::new(
        rng.random_range(-h.x..=h.x),
        rng.random_range(-h.y..=h.y),
        rng.random_range(-h.z..=h.z),
    );
    p[axis] = if rng.random_bool(0.5) { h[axis] } else { -h[axis] };
    p
}

fn cylinder_surface_point<R: Rng + ?Sized>(dims: Vector3<f64>, rng: &mut R) -> Vector3<f64> {
    let r = dims.x / 2.0;
    let hz = dims.z / 2.0;
    let side = 2.0 * PI * r * dims.z;
    let cap = PI * r * r;
    let phi = rng.random_range(0.0..2.0 * PI);
    if rng.random_range(0.0..side + 2.0 * cap) < side {
        Vector3::new(r * phi.cos(), r * phi.sin(), rng.random_range(-hz..=hz))
    } else {
        let rho = r * rng.random_range(0.0f64..1.0).sqrt();
        let z = if rng.random_bool(0.5) { hz } else { -hz };
        Vector3::new(rho * phi.cos(), rho * phi.sin(), z)
    }
}

/// Radial bumps on the unit sphere: `ρ(d) = 1 + Σ a_k exp((d·c_k − 1) / w_k)`.
struct BlobShape {
    bumps: Vec<(Vector3<f64>, f64, f64)>,
}

impl BlobShape {
    const BUMPS: usize = 10;

    fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let bumps = (0..Self::BUMPS)
            .map(|_| {
                let c = unit_vector(rng);
                let a = rng.random_range(0.3..0.7);
                let w = rng.random_range(0.05..0.2);
                (c, a, w)
            })
            .collect();
        BlobShape { bumps }
    }

    fn radius(&self, d: &Vector3<f64>) -> f64 {
        1.0 + self
            .bumps
            .iter()
            .map(|(c, a, w)| a * ((d.dot(c) - 1.0) / w).exp())
            .sum::<f64>()
    }

    fn surface_point<R: Rng + ?Sized>(&self, dims: Vector3<f64>, rng: &mut R) -> Vector3<f64> {
        let d = unit_vector(rng);
        let p = d * self.radius(&d);
        Vector3::new(p.x * dims.x, p.y * dims.y, p.z * dims.z) / 2.0
    }
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-6 && n <= 1.0 {
            return v / n;
        }
    }
}
