use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::pose::Pose;
use crate::so3::RotationMatrix;

/// Least-squares rigid transform mapping `src[i]` onto `dst[i]` (Kabsch).
///
/// Reflections are excluded by flipping the smallest singular direction
/// when the unconstrained solution has negative determinant.
pub fn best_rigid_transform(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<Pose> {
    if src.len() != dst.len() {
        return Err(Error::InvalidArgument(format!(
            "point lists differ in length: {} vs {}",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(Error::Degenerate(format!("{} correspondences, need 3", src.len())));
    }
    let n = src.len() as f64;
    let cs: Vector3<f64> = src.iter().sum::<Vector3<f64>>() / n;
    let cd: Vector3<f64> = dst.iter().sum::<Vector3<f64>>() / n;

    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let sv = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    if !(sv[order[0]] > 0.0) || sv[order[1]] <= 1e-12 * sv[order[0]] {
        return Err(Error::Degenerate("points are collinear or coincident".into()));
    }
    let u = svd.u.ok_or_else(|| Error::Degenerate("SVD failed".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Degenerate("SVD failed".into()))?;
    let v = v_t.transpose();

    let d = (v * u.transpose()).determinant().signum();
    let mut correction = Matrix3::identity();
    correction[(order[2], order[2])] = d;
    let r = v * correction * u.transpose();
    let t = cd - r * cs;
    Ok(Pose::from_matrix(&RotationMatrix::new(r)?, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::random_rotation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)))
            .collect()
    }

    #[test]
    fn identity_for_equal_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = cloud(&mut rng, 20);
        let p = best_rigid_transform(&pts, &pts).unwrap();
        assert!(p.rotation.angle() < 1e-12);
        assert!(p.translation.norm() < 1e-12);
    }

    #[test]
    fn recovers_known_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let pts = cloud(&mut rng, 30);
            let truth = Pose::new(
                random_rotation(&mut rng),
                Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.5..1.5)),
            );
            let moved = truth.transform_all(&pts);
            let est = best_rigid_transform(&pts, &moved).unwrap();
            let err_r = (est.rotation_matrix().matrix() - truth.rotation_matrix().matrix()).norm();
            assert!(err_r < 1e-9, "rotation error {err_r:e}");
            assert!((est.translation - truth.translation).norm() < 1e-9);
        }
    }

    #[test]
    fn mirrored_input_still_gives_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = cloud(&mut rng, 25);
        let mirrored: Vec<_> = pts.iter().map(|p| Vector3::new(p.x, p.y, -p.z)).collect();
        let est = best_rigid_transform(&pts, &mirrored).unwrap();
        let det = est.rotation_matrix().matrix().determinant();
        assert!((det - 1.0).abs() < 1e-9);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let line: Vec<_> = (0..10).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(best_rigid_transform(&line, &line), Err(Error::Degenerate(_))));
        let two = vec![Vector3::zeros(), Vector3::x()];
        assert!(best_rigid_transform(&two, &two).is_err());
    }
}
