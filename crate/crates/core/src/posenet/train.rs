use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::RotationLoss;
use super::loss::{geodesic_rotation_loss, l2_rotation_loss, total_loss, translation_loss};
use super::network::{poses_from_outputs, Bindings, NetInputs, PointSegment, PoseNet};
use crate::autodiff::{adam_step, AdamState, Gradients, Graph, Mode, Var};
use crate::data_io::Sample;
use crate::error::{Error, Result};
use crate::pose::Pose;
use crate::so3::{geodesic_distance, AxisAngle, RotationMatrix};

/// Loss graph of one batch.
pub struct BatchLoss {
    pub graph: Graph,
    pub bindings: Bindings,
    pub total: Var,
    pub rotation_loss: Var,
    pub translation_loss: Var,
    pub predictions: Vec<Pose>,
}

/// Builds `α · mean(l_t) + mean(l_r)` for a batch. In train mode the updated
/// batch-norm statistics are written back into `net`.
pub fn batch_loss(net: &mut PoseNet, segments: &[PointSegment], gts: &[Pose], mode: Mode) -> Result<BatchLoss> {
    if segments.len() != gts.len() {
        return Err(Error::Shape(format!("{} segments, {} poses", segments.len(), gts.len())));
    }
    let inputs = NetInputs::new(segments, &net.config)?;
    let mut g = Graph::new();
    let mut bindings = Bindings::new();
    let raw = g.leaf(inputs.raw);
    let centered = g.leaf(inputs.centered);
    let (out, updates) = net.forward(&mut g, &mut bindings, raw, centered, mode)?;
    net.apply_updates(updates);

    let targets: Vec<AxisAngle> = gts.iter().map(|p| p.rotation.canonical()).collect();
    let rotation_loss = match net.config.rotation_loss {
        RotationLoss::Geodesic => {
            let mats: Vec<RotationMatrix> = targets.iter().map(AxisAngle::to_matrix).collect();
            geodesic_rotation_loss(&mut g, out.rotation, &mats)?
        }
        RotationLoss::L2 => l2_rotation_loss(&mut g, out.rotation, &targets)?,
    };
    let t: Vec<Vector3<f64>> = gts.iter().map(|p| p.translation).collect();
    let translation_loss = translation_loss(&mut g, out.translation, &inputs.means, &t)?;
    let total = total_loss(&mut g, translation_loss, rotation_loss, net.config.alpha)?;
    let predictions = poses_from_outputs(&g, &out, &inputs.means);
    Ok(BatchLoss { graph: g, bindings, total, rotation_loss, translation_loss, predictions })
}

/// Loss value and parameter gradients of one batch.
pub fn batch_gradients(
    net: &mut PoseNet,
    segments: &[PointSegment],
    gts: &[Pose],
    mode: Mode,
) -> Result<(f64, Gradients, Vec<Pose>)> {
    let mut bl = batch_loss(net, segments, gts, mode)?;
    bl.graph.backward(bl.total)?;
    let mut grads = Gradients::new();
    for (name, var) in &bl.bindings {
        if let Some(gr) = bl.graph.grad(*var) {
            grads.insert(name.clone(), gr.to_vec());
        }
    }
    Ok((bl.graph.value(bl.total).item(), grads, bl.predictions))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub loss: f64,
    /// Mean geodesic error of the training-mode predictions, radians.
    pub rotation_error: f64,
    /// Mean translation error, meters.
    pub translation_error: f64,
}

/// Converts dataset samples into network inputs.
pub fn segments_of(samples: &[Sample], n_classes: usize) -> Result<Vec<PointSegment>> {
    samples
        .iter()
        .map(|s| PointSegment::new(s.segment.points.clone(), s.class_id, n_classes))
        .collect()
}

/// One pass over the data in shuffled mini-batches of `batch_size`.
pub fn train_epoch<R: Rng + ?Sized>(
    net: &mut PoseNet,
    segments: &[PointSegment],
    gts: &[Pose],
    adam: &mut AdamState,
    batch_size: usize,
    rng: &mut R,
) -> Result<EpochMetrics> {
    if segments.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if segments.len() != gts.len() {
        return Err(Error::Shape(format!("{} segments, {} poses", segments.len(), gts.len())));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..segments.len()).collect();
    order.shuffle(rng);
    let (mut loss, mut rot, mut trans) = (0.0, 0.0, 0.0);
    for chunk in order.chunks(batch_size) {
        let segs: Vec<PointSegment> = chunk.iter().map(|&i| segments[i].clone()).collect();
        let targets: Vec<Pose> = chunk.iter().map(|&i| gts[i]).collect();
        let (l, grads, preds) = batch_gradients(net, &segs, &targets, Mode::Train)?;
        adam_step(net, &grads, adam);
        loss += l * chunk.len() as f64;
        for (p, t) in preds.iter().zip(&targets) {
            rot += geodesic_distance(&p.rotation_matrix(), &t.rotation_matrix());
            trans += (p.translation - t.translation).norm();
        }
    }
    let n = segments.len() as f64;
    Ok(EpochMetrics {
        loss: loss / n,
        rotation_error: rot / n,
        translation_error: trans / n,
    })
}

/// Eval-mode predictions in batches of `batch_size`.
pub fn predict_all(net: &PoseNet, segments: &[PointSegment], batch_size: usize) -> Result<Vec<Pose>> {
    let mut out = Vec::with_capacity(segments.len());
    for chunk in segments.chunks(batch_size.max(1)) {
        out.extend(net.predict_batch(chunk)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_grad, max_relative_error, Parameters};
    use crate::posenet::{NetConfig, RotationRepr, SharedLayers};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> NetConfig {
        NetConfig {
            point_mlp_widths: vec![8, 16],
            head_widths: vec![16, 8],
            n_points: 16,
            n_classes: 2,
            ..NetConfig::default()
        }
    }

    fn data(rng: &mut ChaCha8Rng, cfg: &NetConfig, b: usize) -> (Vec<PointSegment>, Vec<Pose>) {
        let mut segs = Vec::new();
        let mut poses = Vec::new();
        for i in 0..b {
            let gt = Pose::new(crate::so3::random_rotation(rng), Vector3::new(0.0, 0.0, rng.random_range(0.6..1.2)));
            let shape: Vec<Vector3<f64>> = (0..cfg.n_points)
                .map(|k| {
                    let a = k as f64 * 0.7;
                    Vector3::new(0.05 * a.cos(), 0.03 * a.sin(), 0.01 * k as f64 / cfg.n_points as f64)
                })
                .collect();
            segs.push(PointSegment::new(gt.transform_all(&shape), i % cfg.n_classes, cfg.n_classes).unwrap());
            poses.push(gt);
        }
        (segs, poses)
    }

    fn gradient_check(cfg: NetConfig, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = PoseNet::new(cfg.clone(), &mut rng).unwrap();
        let (segs, poses) = data(&mut rng, &cfg, 2);
        let (_, analytic, _) = batch_gradients(&mut net.clone(), &segs, &poses, Mode::Train).unwrap();
        let numeric = finite_difference_grad(
            |p: &PoseNet| {
                let mut p = p.clone();
                let bl = batch_loss(&mut p, &segs, &poses, Mode::Train).unwrap();
                bl.graph.value(bl.total).item()
            },
            &net,
            1e-5,
        );
        let mut names = 0;
        net.visit(&mut |_, _| names += 1);
        assert_eq!(analytic.len(), names);
        max_relative_error(&analytic, &numeric, 1e-6).0
    }

    #[test]
    fn whole_network_gradient_matches_finite_differences() {
        let err = gradient_check(tiny(), 1);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn quaternion_and_shared_variants_gradient_check() {
        let q = NetConfig { rotation_repr: RotationRepr::Quaternion, ..tiny() };
        assert!(gradient_check(q, 2) < 1e-3);
        let s = NetConfig { shared_layers: SharedLayers::All, ..tiny() };
        assert!(gradient_check(s, 3) < 1e-3);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = tiny();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let mut net = PoseNet::new(cfg.clone(), &mut rng).unwrap();
            let (segs, poses) = data(&mut rng, &cfg, 10);
            let mut adam = AdamState::default();
            let m: Vec<_> = (0..3)
                .map(|_| train_epoch(&mut net, &segs, &poses, &mut adam, 4, &mut rng).unwrap())
                .collect();
            (m, net)
        };
        let (a, na) = run();
        let (b, nb) = run();
        assert_eq!(a, b);
        assert_eq!(na, nb);
    }

    #[test]
    fn overfits_a_single_sample() {
        let cfg = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = PoseNet::new(cfg.clone(), &mut rng).unwrap();
        let (segs, poses) = data(&mut rng, &cfg, 1);
        let mut adam = AdamState::new(0.005);
        let losses: Vec<f64> = (0..50)
            .map(|_| train_epoch(&mut net, &segs, &poses, &mut adam, 1, &mut rng).unwrap().loss)
            .collect();
        assert!(losses.iter().all(|l| l.is_finite()));
        let first: f64 = losses[..10].iter().sum();
        let last: f64 = losses[40..].iter().sum();
        assert!(last < 0.8 * first, "{losses:?}");
        assert!(losses.windows(10).filter(|w| w[9] < w[0]).count() >= 35);
    }

    #[test]
    fn rejects_empty_inputs() {
        let cfg = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut net = PoseNet::new(cfg, &mut rng).unwrap();
        let mut adam = AdamState::default();
        assert!(train_epoch(&mut net, &[], &[], &mut adam, 4, &mut rng).is_err());
    }
}
