use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::{NetConfig, RotationInput, RotationRepr, SharedLayers};
use super::loss::quaternion_to_axis_angle;
use crate::autodiff::{BatchNormState, Graph, Mode, Parameters, Tensor, Var};
use crate::error::{Error, Result};
use crate::pose::Pose;
use crate::so3::AxisAngle;

/// One network input: `n` coordinates plus the object class.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSegment {
    pub coords: Vec<Vector3<f64>>,
    pub class_id: usize,
    pub n_classes: usize,
}

impl PointSegment {
    pub fn new(coords: Vec<Vector3<f64>>, class_id: usize, n_classes: usize) -> Result<Self> {
        if class_id >= n_classes {
            return Err(Error::InvalidArgument(format!(
                "class {class_id} out of range for {n_classes} classes"
            )));
        }
        if coords.is_empty() {
            return Err(Error::EmptyCloud);
        }
        Ok(PointSegment { coords, class_id, n_classes })
    }

    pub fn onehot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n_classes];
        v[self.class_id] = 1.0;
        v
    }

    /// Coordinate mean `μ_t`.
    pub fn mean(&self) -> Vector3<f64> {
        self.coords.iter().sum::<Vector3<f64>>() / self.coords.len() as f64
    }
}

/// Affine layer with optional batch norm (followed by ReLU when present).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub bn: Option<BatchNormState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Point,
    Pool,
    Head,
    Out,
}

/// Forward-order description of every layer: `(name, fan_in, fan_out)`.
fn layer_plan(cfg: &NetConfig) -> Vec<(String, usize, usize)> {
    let pw = cfg.point_widths();
    let hw = cfg.head_hidden_widths();
    let shared = cfg.shared_point_layers();
    let mut plan = Vec::new();
    let point_in = |i: usize| if i == 0 { cfg.in_channels() } else { pw[i - 1] };
    let head_in = |j: usize| if j == 0 { *pw.last().unwrap() } else { hw[j - 1] };
    let out_in = *hw.last().unwrap_or(pw.last().unwrap());
    for i in 0..shared {
        plan.push((format!("shared.point.{i}"), point_in(i), pw[i]));
    }
    if cfg.shared_layers == SharedLayers::All {
        for j in 0..hw.len() {
            plan.push((format!("shared.head.{j}"), head_in(j), hw[j]));
        }
    } else {
        for net in ["rotation", "translation"] {
            for i in shared..pw.len() {
                plan.push((format!("{net}.point.{i}"), point_in(i), pw[i]));
            }
            for j in 0..hw.len() {
                plan.push((format!("{net}.head.{j}"), head_in(j), hw[j]));
            }
        }
    }
    plan.push(("rotation.out".into(), out_in, cfg.out_dim()));
    plan.push(("translation.out".into(), out_in, 3));
    plan
}

/// The rotation and translation networks with all learned state.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseNet {
    pub config: NetConfig,
    layers: BTreeMap<String, Layer>,
}

/// Parameter leaves registered on a graph, keyed by parameter name.
pub type Bindings = BTreeMap<String, Var>;

/// Network outputs on a graph.
#[derive(Debug, Clone, Copy)]
pub struct Outputs {
    /// Raw rotation head, `[batch, out_dim]`.
    pub rotation_raw: Var,
    /// Axis-angle rotation, `[batch, 3]`.
    pub rotation: Var,
    /// Translation residual `Δt̂`, `[batch, 3]`.
    pub translation: Var,
}

impl PoseNet {
    /// He-initialized weights (variance `2 / fan_in`, scaled by
    /// `output_init_gain` on the output layers), zero biases, unit
    /// batch-norm scale and zero shift.
    pub fn new<R: Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut layers = BTreeMap::new();
        for (name, fan_in, fan_out) in layer_plan(&config) {
            let gain = if name.ends_with(".out") { config.output_init_gain } else { 1.0 };
            let normal = Normal::new(0.0, gain * (2.0 / fan_in as f64).sqrt()).expect("valid deviation");
            let weight = Tensor::new(
                vec![fan_in, fan_out],
                (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect(),
            )?;
            let bn = (!name.ends_with(".out")).then(|| BatchNormState::new(format!("{name}.bn"), fan_out));
            layers.insert(name, Layer { weight, bias: Tensor::zeros(&[fan_out]), bn });
        }
        Ok(PoseNet { config, layers })
    }

    pub fn layer(&self, name: &str) -> Option<&Layer> {
        self.layers.get(name)
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut Layer> {
        self.layers.get_mut(name)
    }

    pub fn layer_names(&self) -> impl Iterator<Item = &str> {
        self.layers.keys().map(String::as_str)
    }

    /// Expected shape of every parameter and buffer tensor of `config`.
    pub fn expected_shapes(config: &NetConfig) -> BTreeMap<String, Vec<usize>> {
        let mut shapes = BTreeMap::new();
        for (name, fan_in, fan_out) in layer_plan(config) {
            shapes.insert(format!("{name}.weight"), vec![fan_in, fan_out]);
            shapes.insert(format!("{name}.bias"), vec![fan_out]);
            if !name.ends_with(".out") {
                for p in ["gamma", "beta", "running_mean", "running_var"] {
                    shapes.insert(format!("{name}.bn.{p}"), vec![fan_out]);
                }
                shapes.insert(format!("{name}.bn.initialized"), vec![]);
            }
        }
        shapes
    }

    /// Batch-norm running statistics as tensors: mean, variance, and a
    /// 0/1 scalar recording whether they hold data.
    pub fn visit_buffers(&self, f: &mut dyn FnMut(&str, Tensor)) {
        for (name, layer) in &self.layers {
            if let Some(bn) = &layer.bn {
                f(&format!("{name}.bn.running_mean"), Tensor::from_vec(bn.running_mean.clone()));
                f(&format!("{name}.bn.running_var"), Tensor::from_vec(bn.running_var.clone()));
                f(&format!("{name}.bn.initialized"), Tensor::scalar(if bn.initialized { 1.0 } else { 0.0 }));
            }
        }
    }

    /// Writes a buffer produced by [`visit_buffers`](Self::visit_buffers).
    pub fn set_buffer(&mut self, name: &str, t: &Tensor) -> Result<()> {
        let unknown = || Error::InvalidArgument(format!("unknown buffer `{name}`"));
        let (layer, field) = name.rsplit_once(".bn.").ok_or_else(unknown)?;
        let bn = self.layers.get_mut(layer).and_then(|l| l.bn.as_mut()).ok_or_else(unknown)?;
        match field {
            "running_mean" => bn.running_mean = t.data().to_vec(),
            "running_var" => bn.running_var = t.data().to_vec(),
            "initialized" => bn.initialized = t.item() != 0.0,
            _ => return Err(unknown()),
        }
        Ok(())
    }

    /// Rounds every parameter and buffer through `f32`.
    pub fn to_f32_precision(&self) -> PoseNet {
        let mut out = self.clone();
        out.visit_mut(&mut |_, t| *t = t.to_f32_precision());
        for layer in out.layers.values_mut() {
            if let Some(bn) = &mut layer.bn {
                bn.running_mean.iter_mut().for_each(|v| *v = *v as f32 as f64);
                bn.running_var.iter_mut().for_each(|v| *v = *v as f32 as f64);
            }
        }
        out
    }

    fn bind(&self, g: &mut Graph, binds: &mut Bindings, name: &str, t: &Tensor) -> Var {
        *binds.entry(name.to_string()).or_insert_with(|| g.leaf(t.clone()))
    }

    fn apply(
        &self,
        g: &mut Graph,
        binds: &mut Bindings,
        name: &str,
        x: Var,
        mode: Mode,
        updates: &mut Vec<(String, BatchNormState)>,
    ) -> Result<Var> {
        let layer = self
            .layers
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing layer `{name}`")))?;
        let w = self.bind(g, binds, &format!("{name}.weight"), &layer.weight);
        let b = self.bind(g, binds, &format!("{name}.bias"), &layer.bias);
        let y = g.linear(x, w, b)?;
        let Some(bn) = &layer.bn else { return Ok(y) };
        let gamma = self.bind(g, binds, &format!("{name}.bn.gamma"), &bn.gamma);
        let beta = self.bind(g, binds, &format!("{name}.bn.beta"), &bn.beta);
        let mut state = bn.clone();
        let y = g.batch_norm(y, gamma, beta, &mut state, mode)?;
        if mode == Mode::Train {
            updates.push((name.to_string(), state));
        }
        Ok(g.relu(y))
    }

    fn branch(
        &self,
        g: &mut Graph,
        binds: &mut Bindings,
        net: &str,
        mut x: Var,
        mode: Mode,
        updates: &mut Vec<(String, BatchNormState)>,
    ) -> Result<Var> {
        let pw = self.config.point_widths().len();
        let hw = self.config.head_hidden_widths().len();
        for (kind, i) in (self.config.shared_point_layers()..pw)
            .map(|i| (Kind::Point, i))
            .chain(std::iter::once((Kind::Pool, 0)))
            .chain((0..hw).map(|j| (Kind::Head, j)))
            .chain(std::iter::once((Kind::Out, 0)))
        {
            x = match kind {
                Kind::Point => self.apply(g, binds, &format!("{net}.point.{i}"), x, mode, updates)?,
                Kind::Pool => g.max_over_points(x)?,
                Kind::Head => self.apply(g, binds, &format!("{net}.head.{i}"), x, mode, updates)?,
                Kind::Out => self.apply(g, binds, &format!("{net}.out"), x, mode, updates)?,
            };
        }
        Ok(x)
    }

    /// Runs both networks on `[batch, n, 3 + k]` inputs. `raw` carries
    /// camera-frame coordinates, `centered` the mean-centered ones.
    ///
    /// Batch-norm states updated in train mode are returned rather than
    /// written back, so the forward pass can run on a shared reference.
    pub fn forward(
        &self,
        g: &mut Graph,
        binds: &mut Bindings,
        raw: Var,
        centered: Var,
        mode: Mode,
    ) -> Result<(Outputs, Vec<(String, BatchNormState)>)> {
        let cfg = &self.config;
        let shape = g.value(raw).shape().to_vec();
        if shape.len() != 3 || shape[2] != cfg.in_channels() || g.value(centered).shape() != shape.as_slice() {
            return Err(Error::Shape(format!(
                "network input {shape:?}, expected [batch, n, {}]",
                cfg.in_channels()
            )));
        }
        let mut updates = Vec::new();
        let shared = cfg.shared_point_layers();
        let (rot, trans) = if cfg.shared_layers.is_none() {
            let rot_in = match cfg.rotation_input {
                RotationInput::Raw => raw,
                RotationInput::Centered => centered,
            };
            let r = self.branch(g, binds, "rotation", rot_in, mode, &mut updates)?;
            let t = self.branch(g, binds, "translation", centered, mode, &mut updates)?;
            (r, t)
        } else {
            let mut x = centered;
            for i in 0..shared {
                x = self.apply(g, binds, &format!("shared.point.{i}"), x, mode, &mut updates)?;
            }
            if cfg.shared_layers == SharedLayers::All {
                x = g.max_over_points(x)?;
                for j in 0..cfg.head_widths.len() {
                    x = self.apply(g, binds, &format!("shared.head.{j}"), x, mode, &mut updates)?;
                }
                let r = self.apply(g, binds, "rotation.out", x, mode, &mut updates)?;
                let t = self.apply(g, binds, "translation.out", x, mode, &mut updates)?;
                (r, t)
            } else {
                let r = self.branch(g, binds, "rotation", x, mode, &mut updates)?;
                let t = self.branch(g, binds, "translation", x, mode, &mut updates)?;
                (r, t)
            }
        };
        let rotation = match cfg.rotation_repr {
            RotationRepr::AxisAngle => rot,
            RotationRepr::Quaternion => quaternion_to_axis_angle(g, rot)?,
        };
        Ok((Outputs { rotation_raw: rot, rotation, translation: trans }, updates))
    }

    pub fn apply_updates(&mut self, updates: Vec<(String, BatchNormState)>) {
        for (name, state) in updates {
            if let Some(layer) = self.layers.get_mut(&name) {
                layer.bn = Some(state);
            }
        }
    }

    /// Poses for a batch of segments in eval mode.
    pub fn predict_batch(&self, segments: &[PointSegment]) -> Result<Vec<Pose>> {
        let inputs = NetInputs::new(segments, &self.config)?;
        let mut g = Graph::new();
        let mut binds = Bindings::new();
        let raw = g.leaf(inputs.raw);
        let centered = g.leaf(inputs.centered);
        let (out, _) = self.forward(&mut g, &mut binds, raw, centered, Mode::Eval)?;
        Ok(poses_from_outputs(&g, &out, &inputs.means))
    }

    pub fn predict_pose(&self, segment: &PointSegment) -> Result<Pose> {
        Ok(self.predict_batch(std::slice::from_ref(segment))?.remove(0))
    }
}

/// `t̂ = Δt̂ + μ_t`; rotations canonicalized.
pub fn poses_from_outputs(g: &Graph, out: &Outputs, means: &[Vector3<f64>]) -> Vec<Pose> {
    let r = g.value(out.rotation).data();
    let t = g.value(out.translation).data();
    means
        .iter()
        .enumerate()
        .map(|(b, mu)| {
            let rot = AxisAngle::new(r[3 * b], r[3 * b + 1], r[3 * b + 2]);
            let dt = Vector3::new(t[3 * b], t[3 * b + 1], t[3 * b + 2]);
            Pose::new(rot, dt + mu)
        })
        .collect()
}

/// Batched network inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct NetInputs {
    /// `[batch, n, 3 + k]` with camera-frame coordinates.
    pub raw: Tensor,
    /// `[batch, n, 3 + k]` with mean-centered coordinates.
    pub centered: Tensor,
    pub means: Vec<Vector3<f64>>,
}

impl NetInputs {
    pub fn new(segments: &[PointSegment], cfg: &NetConfig) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let n = cfg.n_points;
        let ch = cfg.in_channels();
        let mut raw = Vec::with_capacity(segments.len() * n * ch);
        let mut centered = Vec::with_capacity(segments.len() * n * ch);
        let mut means = Vec::with_capacity(segments.len());
        for s in segments {
            if s.coords.len() != n || s.n_classes != cfg.n_classes {
                return Err(Error::Shape(format!(
                    "segment has {} points and {} classes, network expects {n} and {}",
                    s.coords.len(),
                    s.n_classes,
                    cfg.n_classes
                )));
            }
            let mu = s.mean();
            let onehot = s.onehot();
            for p in &s.coords {
                raw.extend(p.iter());
                raw.extend(&onehot);
                centered.extend((p - mu).iter());
                centered.extend(&onehot);
            }
            means.push(mu);
        }
        let shape = vec![segments.len(), n, ch];
        Ok(NetInputs {
            raw: Tensor::new(shape.clone(), raw)?,
            centered: Tensor::new(shape, centered)?,
            means,
        })
    }
}

impl Parameters for PoseNet {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (name, layer) in &self.layers {
            f(&format!("{name}.weight"), &layer.weight);
            f(&format!("{name}.bias"), &layer.bias);
            if let Some(bn) = &layer.bn {
                f(&format!("{name}.bn.gamma"), &bn.gamma);
                f(&format!("{name}.bn.beta"), &bn.beta);
            }
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (name, layer) in &mut self.layers {
            f(&format!("{name}.weight"), &mut layer.weight);
            f(&format!("{name}.bias"), &mut layer.bias);
            if let Some(bn) = &mut layer.bn {
                f(&format!("{name}.bn.gamma"), &mut bn.gamma);
                f(&format!("{name}.bn.beta"), &mut bn.beta);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posenet::{batch_gradients, RotationLoss};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_config() -> NetConfig {
        NetConfig {
            point_mlp_widths: vec![8, 16],
            head_widths: vec![16, 8],
            n_points: 16,
            n_classes: 2,
            ..NetConfig::default()
        }
    }

    pub(crate) fn random_segments(rng: &mut ChaCha8Rng, cfg: &NetConfig, b: usize) -> (Vec<PointSegment>, Vec<Pose>) {
        let mut segs = Vec::new();
        let mut poses = Vec::new();
        for i in 0..b {
            let center = Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(0.5..1.5));
            let coords = (0..cfg.n_points)
                .map(|_| center + Vector3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)))
                .collect();
            segs.push(PointSegment::new(coords, i % cfg.n_classes, cfg.n_classes).unwrap());
            poses.push(Pose::new(crate::so3::random_rotation(rng), center + Vector3::new(0.01, -0.02, 0.03)));
        }
        (segs, poses)
    }

    /// A network whose batch-norm layers have seen one training batch.
    fn warmed(cfg: NetConfig, seed: u64) -> (PoseNet, Vec<PointSegment>, Vec<Pose>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = PoseNet::new(cfg.clone(), &mut rng).unwrap();
        let (segs, poses) = random_segments(&mut rng, &cfg, 4);
        batch_gradients(&mut net, &segs, &poses, Mode::Train).unwrap();
        (net, segs, poses)
    }

    #[test]
    fn init_is_deterministic_with_expected_shapes() {
        let cfg = NetConfig::default();
        let a = PoseNet::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = PoseNet::new(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.layer("rotation.point.0").unwrap().weight.shape(), &[7, 64]);
        assert_eq!(a.layer("translation.point.0").unwrap().weight.shape(), &[7, 64]);
        assert_eq!(a.layer("rotation.out").unwrap().weight.shape(), &[256, 3]);
        assert!(a.layer("rotation.out").unwrap().bn.is_none());
        let expected = PoseNet::expected_shapes(&a.config);
        a.visit(&mut |name, t| assert_eq!(expected[name].as_slice(), t.shape(), "{name}"));
    }

    #[test]
    fn he_variance() {
        let net = PoseNet::new(NetConfig::default(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let w = net.layer("rotation.point.2").unwrap().weight.data();
        assert!(w.len() >= 10_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64;
        let expected = 2.0 / 128.0;
        assert!((var - expected).abs() < 0.2 * expected, "{var} vs {expected}");
    }

    #[test]
    fn eval_before_training_is_rejected() {
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = PoseNet::new(cfg.clone(), &mut rng).unwrap();
        let (segs, _) = random_segments(&mut rng, &cfg, 1);
        assert!(matches!(net.predict_pose(&segs[0]), Err(Error::UninitializedStats(_))));
    }

    #[test]
    fn permutation_invariance_is_exact() {
        let (net, segs, _) = warmed(tiny_config(), 6);
        let mut shuffled = segs[0].clone();
        shuffled.coords.reverse();
        shuffled.coords.swap(0, 5);
        let a = net.predict_pose(&segs[0]).unwrap();
        let b = net.predict_pose(&shuffled).unwrap();
        assert_eq!(a.rotation, b.rotation);
        // the coordinate mean is summed in a different order
        assert!((a.translation - b.translation).norm() < 1e-12);

        let inputs_a = NetInputs::new(&segs[..1], &net.config).unwrap();
        let inputs_b = NetInputs::new(&[shuffled], &net.config).unwrap();
        let run = |inp: NetInputs| {
            let mut g = Graph::new();
            let mut binds = Bindings::new();
            let r = g.leaf(inp.raw);
            let c = g.leaf(Tensor::new(vec![1, 16, 5], g.value(r).data().to_vec()).unwrap());
            let (out, _) = net.forward(&mut g, &mut binds, r, c, Mode::Eval).unwrap();
            (g.value(out.rotation).data().to_vec(), g.value(out.translation).data().to_vec())
        };
        assert_eq!(run(inputs_a), run(inputs_b));
    }

    #[test]
    fn identical_segments_give_identical_rows() {
        let (net, segs, _) = warmed(tiny_config(), 7);
        let batch = vec![segs[1].clone(), segs[1].clone(), segs[1].clone()];
        let poses = net.predict_batch(&batch).unwrap();
        assert_eq!(poses[0], poses[1]);
        assert_eq!(poses[1], poses[2]);
    }

    #[test]
    fn zero_residual_gives_segment_mean() {
        let (mut net, segs, _) = warmed(tiny_config(), 8);
        let out = net.layer_mut("translation.out").unwrap();
        out.weight.data_mut().fill(0.0);
        out.bias.data_mut().fill(0.0);
        let p = net.predict_pose(&segs[0]).unwrap();
        assert_eq!(p.translation, segs[0].mean());

        let out = net.layer_mut("translation.out").unwrap();
        out.bias.data_mut().copy_from_slice(&[0.1, 0.0, 0.0]);
        let mut seg = segs[0].clone();
        let mu = Vector3::new(1.0, 2.0, 3.0);
        let shift = mu - seg.mean();
        seg.coords.iter_mut().for_each(|c| *c += shift);
        let p = net.predict_pose(&seg).unwrap();
        assert!((p.translation - Vector3::new(1.1, 2.0, 3.0)).norm() < 1e-12);
    }

    #[test]
    fn translation_equivariance() {
        let (net, segs, _) = warmed(tiny_config(), 9);
        let d = Vector3::new(0.3, -0.25, 0.4);
        let mut moved = segs[2].clone();
        moved.coords.iter_mut().for_each(|c| *c += d);
        let a = net.predict_pose(&segs[2]).unwrap();
        let b = net.predict_pose(&moved).unwrap();
        assert!((b.translation - a.translation - d).norm() < 1e-12);
    }

    #[test]
    fn output_shapes() {
        let (net, segs, _) = warmed(tiny_config(), 10);
        let inputs = NetInputs::new(&segs, &net.config).unwrap();
        let mut g = Graph::new();
        let mut binds = Bindings::new();
        let r = g.leaf(inputs.raw);
        let c = g.leaf(inputs.centered);
        let (out, _) = net.forward(&mut g, &mut binds, r, c, Mode::Eval).unwrap();
        assert_eq!(g.value(out.rotation_raw).shape(), &[4, 3]);
        assert_eq!(g.value(out.translation).shape(), &[4, 3]);

        let q = NetConfig { rotation_repr: RotationRepr::Quaternion, ..tiny_config() };
        let (net, segs, _) = warmed(q, 10);
        let inputs = NetInputs::new(&segs, &net.config).unwrap();
        let mut g = Graph::new();
        let mut binds = Bindings::new();
        let r = g.leaf(inputs.raw);
        let c = g.leaf(inputs.centered);
        let (out, _) = net.forward(&mut g, &mut binds, r, c, Mode::Eval).unwrap();
        assert_eq!(g.value(out.rotation_raw).shape(), &[4, 4]);
        assert_eq!(g.value(out.rotation).shape(), &[4, 3]);
    }

    #[test]
    fn input_shape_errors() {
        let (net, mut segs, _) = warmed(tiny_config(), 11);
        segs[0].coords.pop();
        assert!(net.predict_pose(&segs[0]).is_err());
        assert!(PointSegment::new(vec![Vector3::zeros()], 2, 2).is_err());
    }

    #[test]
    fn sharing_reduces_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let none = PoseNet::new(NetConfig::default(), &mut rng).unwrap();
        let two = PoseNet::new(NetConfig { shared_layers: SharedLayers::Count(2), ..NetConfig::default() }, &mut rng).unwrap();
        let all = PoseNet::new(NetConfig { shared_layers: SharedLayers::All, ..NetConfig::default() }, &mut rng).unwrap();
        assert!(all.parameter_count() < two.parameter_count());
        assert!(two.parameter_count() < none.parameter_count());
        assert!(none.layer_names().all(|n| !n.starts_with("shared")));
    }

    /// Unshared network with every layer copied from `shared`, so that both
    /// branches start from the same weights.
    fn unshared_clone(shared: &PoseNet) -> PoseNet {
        let cfg = NetConfig {
            shared_layers: SharedLayers::Count(0),
            rotation_input: RotationInput::Centered,
            ..shared.config.clone()
        };
        let mut clone = PoseNet::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let names: Vec<String> = clone.layer_names().map(String::from).collect();
        for name in names {
            let (net, rest) = name.split_once('.').unwrap();
            let source = shared
                .layer(&name)
                .or_else(|| shared.layer(&format!("shared.{rest}")))
                .unwrap_or_else(|| panic!("no source for {name} ({net})"));
            *clone.layer_mut(&name).unwrap() = source.clone();
        }
        clone
    }

    fn check_clone_and_sum(shared_layers: SharedLayers) {
        let cfg = NetConfig { shared_layers, ..tiny_config() };
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut shared = PoseNet::new(cfg.clone(), &mut rng).unwrap();
        let mut clone = unshared_clone(&shared);
        let (segs, poses) = random_segments(&mut rng, &cfg, 3);
        let (ls, gs, _) = batch_gradients(&mut shared, &segs, &poses, Mode::Train).unwrap();
        let (lc, gc, _) = batch_gradients(&mut clone, &segs, &poses, Mode::Train).unwrap();
        assert!((ls - lc).abs() < 1e-12);
        let mut checked = 0;
        for (name, g) in &gs {
            let Some(rest) = name.strip_prefix("shared.") else {
                assert_eq!(g, &gc[name], "{name}");
                continue;
            };
            let a = &gc[&format!("rotation.{rest}")];
            let b = &gc[&format!("translation.{rest}")];
            for ((s, x), y) in g.iter().zip(a).zip(b) {
                assert!((s - (x + y)).abs() <= 1e-10 * (1.0 + s.abs()), "{name}: {s} vs {}", x + y);
            }
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn shared_gradient_is_sum_of_task_gradients() {
        check_clone_and_sum(SharedLayers::Count(1));
        check_clone_and_sum(SharedLayers::Count(2));
        check_clone_and_sum(SharedLayers::All);
    }

    #[test]
    fn l2_variant_trains_on_same_graph() {
        let cfg = NetConfig { rotation_loss: RotationLoss::L2, ..tiny_config() };
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut net = PoseNet::new(cfg.clone(), &mut rng).unwrap();
        let (segs, poses) = random_segments(&mut rng, &cfg, 2);
        let (l, g, _) = batch_gradients(&mut net, &segs, &poses, Mode::Train).unwrap();
        assert!(l.is_finite() && g.values().flatten().all(|v| v.is_finite()));
    }
}
