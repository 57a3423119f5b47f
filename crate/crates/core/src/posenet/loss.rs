//! Rotation and translation losses built on the autodiff graph. Per-sample
//! losses are `[batch]` tensors; [`total_loss`] reduces them.

use nalgebra::Vector3;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::so3::{AxisAngle, RotationMatrix, ACOS_CLAMP_EPS, TAYLOR_THRESHOLD};

/// Below this angle the coefficient derivatives use their series.
const SERIES_THRESHOLD: f64 = 1e-2;
/// Below this half-angle the quaternion conversion uses its series.
const QUAT_SERIES_THRESHOLD: f64 = 1e-3;

/// `sin θ / θ` as a function of `s = θ²`, with its derivative in `s`.
fn coef_a(s: f64) -> (f64, f64) {
    let t = s.max(0.0).sqrt();
    let value = if t < TAYLOR_THRESHOLD { 1.0 - s / 6.0 } else { t.sin() / t };
    let deriv = if t < SERIES_THRESHOLD {
        -1.0 / 6.0 + s / 60.0 - s * s / 1680.0
    } else {
        (t * t.cos() - t.sin()) / (2.0 * t * t * t)
    };
    (value, deriv)
}

/// `(1 − cos θ) / θ²` as a function of `s = θ²`, with its derivative in `s`.
fn coef_b(s: f64) -> (f64, f64) {
    let t = s.max(0.0).sqrt();
    let half = (t / 2.0).sin();
    let value = if t < TAYLOR_THRESHOLD { 0.5 - s / 24.0 } else { 2.0 * half * half / s };
    let deriv = if t < SERIES_THRESHOLD {
        -1.0 / 24.0 + s / 360.0 - s * s / 13440.0
    } else {
        (t * t.sin() - 4.0 * half * half) / (2.0 * s * s)
    };
    (value, deriv)
}

fn check_rows(g: &Graph, x: Var, cols: usize, rows: usize, what: &str) -> Result<()> {
    if g.value(x).shape() != [rows, cols] {
        return Err(Error::Shape(format!(
            "{what}: prediction {:?} against {rows} targets of size {cols}",
            g.value(x).shape()
        )));
    }
    Ok(())
}

/// Geodesic distance between `exp(r̂_b)` and each target rotation.
///
/// Uses `tr(R̂ Rᵀ) = tr R · (1 − B θ²) + A · w·r̂ + B · r̂ᵀ R r̂`, the
/// Rodrigues expansion with `A = sin θ/θ`, `B = (1 − cos θ)/θ²` and `w` the
/// axial vector of `R − Rᵀ`.
pub fn geodesic_rotation_loss(g: &mut Graph, rhat: Var, targets: &[RotationMatrix]) -> Result<Var> {
    let b = targets.len();
    check_rows(g, rhat, 3, b, "geodesic loss")?;
    let col = |k: usize| -> Vec<f64> { targets.iter().map(|r| r.matrix()[(k / 3, k % 3)]).collect() };
    let m: Vec<Vec<f64>> = (0..9).map(col).collect();
    let pair = |i: usize, j: usize| -> Vec<f64> { m[i].iter().zip(&m[j]).map(|(a, c)| a + c).collect() };
    let diff = |i: usize, j: usize| -> Vec<f64> { m[i].iter().zip(&m[j]).map(|(a, c)| a - c).collect() };
    let trace: Vec<f64> = (0..b).map(|k| m[0][k] + m[4][k] + m[8][k]).collect();

    let x = g.column(rhat, 0)?;
    let y = g.column(rhat, 1)?;
    let z = g.column(rhat, 2)?;
    let (xx, yy, zz) = (g.square(x), g.square(y), g.square(z));
    let s = g.add(xx, yy)?;
    let s = g.add(s, zz)?;
    let a = g.unary(s, coef_a);
    let bc = g.unary(s, coef_b);

    // w · r̂ with w = (R21 − R12, R02 − R20, R10 − R01)
    let lx = g.mul_const(x, &diff(7, 5))?;
    let ly = g.mul_const(y, &diff(2, 6))?;
    let lz = g.mul_const(z, &diff(3, 1))?;
    let lin = g.add(lx, ly)?;
    let lin = g.add(lin, lz)?;

    // r̂ᵀ R r̂
    let xy = g.mul(x, y)?;
    let xz = g.mul(x, z)?;
    let yz = g.mul(y, z)?;
    let terms = [
        g.mul_const(xx, &m[0])?,
        g.mul_const(yy, &m[4])?,
        g.mul_const(zz, &m[8])?,
        g.mul_const(xy, &pair(1, 3))?,
        g.mul_const(xz, &pair(2, 6))?,
        g.mul_const(yz, &pair(5, 7))?,
    ];
    let mut quad = terms[0];
    for t in &terms[1..] {
        quad = g.add(quad, *t)?;
    }

    let bs = g.mul(bc, s)?;
    let neg_trace: Vec<f64> = trace.iter().map(|t| -t).collect();
    let diag = g.mul_const(bs, &neg_trace)?;
    let diag = g.add_const(diag, &trace)?;
    let skew_part = g.mul(a, lin)?;
    let sym_part = g.mul(bc, quad)?;
    let tr = g.add(diag, skew_part)?;
    let tr = g.add(tr, sym_part)?;
    let c = g.scale(tr, 0.5);
    let c = g.add_scalar(c, -0.5);
    Ok(g.acos_clamped(c, ACOS_CLAMP_EPS))
}

/// Euclidean distance between predicted and target axis-angle vectors.
pub fn l2_rotation_loss(g: &mut Graph, rhat: Var, targets: &[AxisAngle]) -> Result<Var> {
    check_rows(g, rhat, 3, targets.len(), "L2 loss")?;
    let neg: Vec<f64> = targets.iter().flat_map(|r| r.0.iter().map(|v| -v).collect::<Vec<_>>()).collect();
    let d = g.add_const(rhat, &neg)?;
    g.row_norm(d)
}

/// `‖Δt̂ + μ − t‖` per sample: the residual prediction plus the segment mean
/// against the true translation.
pub fn translation_loss(g: &mut Graph, residual: Var, means: &[Vector3<f64>], targets: &[Vector3<f64>]) -> Result<Var> {
    check_rows(g, residual, 3, targets.len(), "translation loss")?;
    if means.len() != targets.len() {
        return Err(Error::Shape(format!("{} means for {} targets", means.len(), targets.len())));
    }
    let offset: Vec<f64> = means
        .iter()
        .zip(targets)
        .flat_map(|(m, t)| (m - t).iter().copied().collect::<Vec<_>>())
        .collect();
    let d = g.add_const(residual, &offset)?;
    g.row_norm(d)
}

/// `α · mean(l_t) + mean(l_r)`.
pub fn total_loss(g: &mut Graph, translation: Var, rotation: Var, alpha: f64) -> Result<Var> {
    let lt = g.mean(translation);
    let lt = g.scale(lt, alpha);
    let lr = g.mean(rotation);
    g.add(lt, lr)
}

/// `g(w) = 2 acos(w) / sqrt(1 − w²)` and its derivative, for `w ∈ [0, 1]`.
fn half_angle_gain(w: f64) -> (f64, f64) {
    let w = w.clamp(-1.0, 1.0);
    let phi = w.acos();
    if phi < QUAT_SERIES_THRESHOLD {
        let p2 = phi * phi;
        (
            2.0 * (1.0 + p2 / 6.0 + 7.0 * p2 * p2 / 360.0),
            -2.0 * (1.0 / 3.0 + 2.0 * p2 / 15.0),
        )
    } else {
        let s = phi.sin();
        (2.0 * phi / s, -2.0 * (s - phi * phi.cos()) / (s * s * s))
    }
}

/// Maps raw 4-d outputs `[batch, 4]` (w, x, y, z) to axis-angle `[batch, 3]`.
///
/// Each row is normalized and flipped to `w ≥ 0`, so `q` and `−q` give the
/// same result.
pub fn quaternion_to_axis_angle(g: &mut Graph, q: Var) -> Result<Var> {
    let shape = g.value(q).shape().to_vec();
    if shape.len() != 2 || shape[1] != 4 {
        return Err(Error::Shape(format!("quaternion head output {shape:?}, expected [batch, 4]")));
    }
    let norm = g.row_norm(q)?;
    if g.value(norm).data().iter().any(|&n| !(n > 0.0)) {
        return Err(Error::ZeroQuaternion);
    }
    let sign: Vec<f64> = g
        .value(q)
        .data()
        .chunks_exact(4)
        .map(|r| if r[0] < 0.0 { -1.0 } else { 1.0 })
        .collect();
    let mut comps = Vec::with_capacity(4);
    for j in 0..4 {
        let c = g.column(q, j)?;
        let c = g.div(c, norm)?;
        comps.push(g.mul_const(c, &sign)?);
    }
    let gain = g.unary(comps[0], half_angle_gain);
    let cols = [g.mul(gain, comps[1])?, g.mul(gain, comps[2])?, g.mul(gain, comps[3])?];
    g.stack_columns(&cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::so3::{exp_map, geodesic_distance, quat_to_axis_angle, random_rotation, Quaternion};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn rows(v: &[[f64; 3]]) -> Tensor {
        Tensor::new(vec![v.len(), 3], v.iter().flatten().copied().collect()).unwrap()
    }

    fn geodesic(rhat: &[[f64; 3]], targets: &[RotationMatrix]) -> Vec<f64> {
        let mut g = Graph::new();
        let x = g.leaf(rows(rhat));
        let l = geodesic_rotation_loss(&mut g, x, targets).unwrap();
        g.value(l).data().to_vec()
    }

    fn fd_check(f: impl Fn(&[f64]) -> f64, analytic: &[f64], x: &[f64], tol: f64) {
        let h = 1e-5;
        for i in 0..x.len() {
            let mut p = x.to_vec();
            p[i] += h;
            let fp = f(&p);
            p[i] -= 2.0 * h;
            let fm = f(&p);
            let fd = (fp - fm) / (2.0 * h);
            let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
            assert!(rel < tol, "coord {i}: fd {fd} analytic {}", analytic[i]);
        }
    }

    #[test]
    fn coefficient_series_match_closed_forms() {
        for t in [1e-5, 5e-4, 2e-3, 9e-3, 1.1e-2, 0.5, 2.0, 3.1] {
            let s: f64 = t * t;
            let (a, da) = coef_a(s);
            let (b, db) = coef_b(s);
            assert!((a - t.sin() / t).abs() < 1e-12);
            let half = (t / 2.0).sin();
            assert!((b - 2.0 * half * half / s).abs() < 1e-12);
            let h = 1e-3 * s;
            let fd_a = (coef_a(s + h).0 - coef_a(s - h).0) / (2.0 * h);
            let fd_b = (coef_b(s + h).0 - coef_b(s - h).0) / (2.0 * h);
            if t > TAYLOR_THRESHOLD {
                assert!((da - fd_a).abs() < 1e-5, "t={t} {da} {fd_a}");
                assert!((db - fd_b).abs() < 1e-5, "t={t} {db} {fd_b}");
            }
        }
    }

    #[test]
    fn geodesic_examples() {
        let id = RotationMatrix::identity();
        let l = geodesic(&[[PI / 2.0, 0.0, 0.0], [0.0, 0.0, 0.0]], &[id.clone(), id.clone()]);
        assert!((l[0] - PI / 2.0).abs() < 1e-12);
        assert!(l[1] < 5e-4);
    }

    #[test]
    fn geodesic_matches_matrix_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut preds = Vec::new();
        let mut targets = Vec::new();
        let mut expected = Vec::new();
        for _ in 0..50 {
            let a = random_rotation(&mut rng);
            // any-norm predictions, including beyond π
            let scale = rng.random_range(0.0..2.0);
            let p = AxisAngle(a.0 * scale);
            let t = random_rotation(&mut rng).to_matrix();
            expected.push(geodesic_distance(&exp_map(&p), &t));
            preds.push(p.to_array());
            targets.push(t);
        }
        for (a, b) in geodesic(&preds, &targets).iter().zip(&expected) {
            assert!((a - b).abs() < 1e-9, "{a} {b}");
            assert!((0.0..=PI).contains(a));
        }
    }

    #[test]
    fn geodesic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let axis = random_rotation(&mut rng).0.normalize();
            let theta = rng.random_range(0.1..3.0);
            let target = vec![random_rotation(&mut rng).to_matrix()];
            let x: Vec<f64> = (axis * theta).iter().copied().collect();
            let mut g = Graph::new();
            let v = g.leaf(rows(&[[x[0], x[1], x[2]]]));
            let l = geodesic_rotation_loss(&mut g, v, &target).unwrap();
            let loss = g.sum(l);
            g.backward(loss).unwrap();
            let grad = g.grad(v).unwrap().to_vec();
            let f = |p: &[f64]| geodesic(&[[p[0], p[1], p[2]]], &target)[0];
            fd_check(f, &grad, &x, 1e-3);
        }
    }

    #[test]
    fn small_angle_gradient_is_finite() {
        let target = vec![RotationMatrix::identity().compose(&AxisAngle::new(0.3, 0.0, 0.0).to_matrix())];
        for eps in [0.0, 1e-9, 1e-5, 3e-3] {
            let mut g = Graph::new();
            let v = g.leaf(rows(&[[eps, 0.0, 0.0]]));
            let l = geodesic_rotation_loss(&mut g, v, &target).unwrap();
            let loss = g.sum(l);
            g.backward(loss).unwrap();
            let grad = g.grad(v).unwrap();
            assert!(grad.iter().all(|d| d.is_finite()));
            // moving toward the target reduces the loss
            assert!(grad[0] < -0.9, "{grad:?}");
        }
    }

    #[test]
    fn l2_examples_and_contrast() {
        let mut g = Graph::new();
        let x = g.leaf(rows(&[[1.0, 0.0, 0.0], [0.2, 0.3, 0.4], [2.0 * PI - 0.1, 0.0, 0.0]]));
        let targets = [AxisAngle::zero(), AxisAngle::new(0.2, 0.3, 0.4), AxisAngle::zero()];
        let l = l2_rotation_loss(&mut g, x, &targets).unwrap();
        let v = g.value(l).data().to_vec();
        assert_eq!(v[0], 1.0);
        assert_eq!(v[1], 0.0);
        assert!(v[2] > 6.0);
        let geo = geodesic(&[[2.0 * PI - 0.1, 0.0, 0.0]], &[RotationMatrix::identity()]);
        assert!((geo[0] - 0.1).abs() < 1e-9);
    }

    #[test]
    fn translation_examples() {
        let mut g = Graph::new();
        let dt = g.leaf(rows(&[[0.03, 0.04, 0.0]]));
        let l = translation_loss(&mut g, dt, &[Vector3::zeros()], &[Vector3::zeros()]).unwrap();
        assert!((g.value(l).data()[0] - 0.05).abs() < 1e-15);
        let loss = g.sum(l);
        g.backward(loss).unwrap();
        let grad = g.grad(dt).unwrap();
        assert!((grad[0] - 0.6).abs() < 1e-12 && (grad[1] - 0.8).abs() < 1e-12);

        let mut g = Graph::new();
        let dt = g.leaf(rows(&[[0.1, 0.0, 0.0]]));
        let l = translation_loss(&mut g, dt, &[Vector3::new(1.0, 2.0, 3.0)], &[Vector3::new(1.1, 2.0, 3.0)]).unwrap();
        assert!(g.value(l).data()[0] < 1e-15);
    }

    #[test]
    fn total_loss_arithmetic() {
        let mut g = Graph::new();
        let lt = g.leaf(Tensor::from_vec(vec![0.02]));
        let lr = g.leaf(Tensor::from_vec(vec![0.3]));
        let total = total_loss(&mut g, lt, lr, 10.0).unwrap();
        assert!((g.value(total).item() - 0.5).abs() < 1e-15);
        let only_rot = total_loss(&mut g, lt, lr, 0.0).unwrap();
        assert_eq!(g.value(only_rot).item(), 0.3);
    }

    fn quat_graph(q: &[[f64; 4]]) -> (Vec<f64>, Graph, Var, Var) {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![q.len(), 4], q.iter().flatten().copied().collect()).unwrap());
        let r = quaternion_to_axis_angle(&mut g, x).unwrap();
        (g.value(r).data().to_vec(), g, x, r)
    }

    #[test]
    fn quaternion_conversion_matches_so3() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let (r, ..) = quat_graph(&[q]);
            let expected = quat_to_axis_angle(&Quaternion::new(q[0], q[1], q[2], q[3])).unwrap();
            let got = AxisAngle::new(r[0], r[1], r[2]);
            assert!((got.0 - expected.0).norm() < 1e-9 || (got.angle() - PI).abs() < 1e-6);
        }
        let (r, ..) = quat_graph(&[[2.0, 0.0, 0.0, 0.0]]);
        assert_eq!(r, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn quaternion_sign_invariance() {
        let q = [0.3, -0.5, 0.2, 0.7];
        let nq = q.map(|v| -v);
        let (a, ..) = quat_graph(&[q]);
        let (b, ..) = quat_graph(&[nq]);
        assert_eq!(a, b);
    }

    #[test]
    fn quaternion_gradient_matches_finite_differences() {
        let target = vec![AxisAngle::new(0.4, -0.2, 0.9).to_matrix()];
        for q in [[0.3, -0.5, 0.2, 0.7], [0.9, 0.1, 0.05, -0.02], [-0.2, 0.6, 0.6, 0.1], [1.0, 2e-4, -1e-4, 3e-4]] {
            let loss_of = |p: &[f64]| {
                let mut g = Graph::new();
                let x = g.leaf(Tensor::new(vec![1, 4], p.to_vec()).unwrap());
                let r = quaternion_to_axis_angle(&mut g, x).unwrap();
                let l = geodesic_rotation_loss(&mut g, r, &target).unwrap();
                g.value(l).data()[0]
            };
            let (_, mut g, x, r) = quat_graph(&[q]);
            let l = geodesic_rotation_loss(&mut g, r, &target).unwrap();
            let loss = g.sum(l);
            g.backward(loss).unwrap();
            let grad = g.grad(x).unwrap().to_vec();
            fd_check(loss_of, &grad, &q, 1e-4);
        }
    }

    #[test]
    fn shape_errors() {
        let mut g = Graph::new();
        let x = g.leaf(rows(&[[0.0; 3]]));
        assert!(geodesic_rotation_loss(&mut g, x, &[]).is_err());
        assert!(quaternion_to_axis_angle(&mut g, x).is_err());
        let z = g.leaf(Tensor::zeros(&[1, 4]));
        assert!(quaternion_to_axis_angle(&mut g, z).is_err());
    }
}
