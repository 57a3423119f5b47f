use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::bytes::Reader;
use crate::autodiff::{AdamState, Parameters, Tensor};
use crate::error::{Error, Result};
use crate::posenet::{NetConfig, PoseNet};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CPSE";
pub const CHECKPOINT_VERSION: u32 = 1;

const ADAM_STEP: &str = "adam.step";
const ADAM_HYPER: &str = "adam.hyper";

/// Named tensors of a trained network, optionally with optimizer state.
///
/// Parameters and batch-norm buffers use the names produced by
/// [`PoseNet`]; Adam moments are stored as `adam.m.<param>` and
/// `adam.v.<param>` next to the scalar `adam.step` and the four
/// hyperparameters in `adam.hyper`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: NetConfig,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn from_net(net: &PoseNet, adam: Option<&AdamState>) -> Checkpoint {
        let mut tensors = BTreeMap::new();
        net.visit(&mut |name, t| {
            tensors.insert(name.to_string(), t.clone());
        });
        net.visit_buffers(&mut |name, t| {
            tensors.insert(name.to_string(), t);
        });
        if let Some(adam) = adam {
            for (name, (m, v)) in &adam.moments {
                let shape = tensors[name].shape().to_vec();
                tensors.insert(format!("adam.m.{name}"), Tensor::new(shape.clone(), m.clone()).unwrap());
                tensors.insert(format!("adam.v.{name}"), Tensor::new(shape, v.clone()).unwrap());
            }
            tensors.insert(ADAM_STEP.into(), Tensor::scalar(adam.step as f64));
            tensors.insert(
                ADAM_HYPER.into(),
                Tensor::from_vec(vec![adam.lr, adam.beta1, adam.beta2, adam.epsilon]),
            );
        }
        Checkpoint {
            config: net.config.clone(),
            tensors,
        }
    }

    pub fn has_optimizer(&self) -> bool {
        self.tensors.contains_key(ADAM_STEP)
    }

    /// Rebuilds the network (and Adam state, when stored), checking every
    /// tensor against the shapes implied by the config.
    pub fn restore(&self) -> std::result::Result<(PoseNet, Option<AdamState>), String> {
        self.config.validate().map_err(|e| format!("config: {e}"))?;
        let expected = PoseNet::expected_shapes(&self.config);
        for (name, shape) in &expected {
            let t = self
                .tensors
                .get(name)
                .ok_or_else(|| format!("missing tensor `{name}`"))?;
            if t.shape() != shape.as_slice() {
                return Err(format!(
                    "tensor `{name}` has shape {:?} but the config expects {:?}",
                    t.shape(),
                    shape
                ));
            }
        }
        let adam_name = |n: &str| n.starts_with("adam.");
        if let Some(extra) = self.tensors.keys().find(|n| !expected.contains_key(*n) && !adam_name(n)) {
            return Err(format!("unexpected tensor `{extra}`"));
        }

        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut net = PoseNet::new(self.config.clone(), &mut rng).map_err(|e| e.to_string())?;
        net.visit_mut(&mut |name, t| *t = self.tensors[name].clone());
        for (name, t) in &self.tensors {
            if name.contains(".bn.") && !name.ends_with(".gamma") && !name.ends_with(".beta") {
                net.set_buffer(name, t).map_err(|e| e.to_string())?;
            }
        }
        Ok((net, self.restore_adam(&expected)?))
    }

    fn restore_adam(&self, expected: &BTreeMap<String, Vec<usize>>) -> std::result::Result<Option<AdamState>, String> {
        let Some(step) = self.tensors.get(ADAM_STEP) else {
            return match self.tensors.keys().find(|n| n.starts_with("adam.")) {
                Some(n) => Err(format!("optimizer tensor `{n}` without `{ADAM_STEP}`")),
                None => Ok(None),
            };
        };
        let hyper = self
            .tensors
            .get(ADAM_HYPER)
            .ok_or_else(|| format!("missing tensor `{ADAM_HYPER}`"))?;
        if !step.shape().is_empty() || hyper.shape() != [4] {
            return Err("malformed optimizer hyperparameters".into());
        }
        let h = hyper.data();
        let mut adam = AdamState {
            lr: h[0],
            beta1: h[1],
            beta2: h[2],
            epsilon: h[3],
            step: step.item() as u64,
            moments: BTreeMap::new(),
        };
        for (name, t) in self.tensors.iter().filter(|(n, _)| n.starts_with("adam.")) {
            let Some(param) = name.strip_prefix("adam.m.") else {
                if name.starts_with("adam.v.") || name == ADAM_STEP || name == ADAM_HYPER {
                    continue;
                }
                return Err(format!("unexpected tensor `{name}`"));
            };
            let shape = expected
                .get(param)
                .filter(|_| !param.contains(".bn.running") && !param.ends_with(".bn.initialized"))
                .ok_or_else(|| format!("moment `{name}` names no parameter"))?;
            let v = self
                .tensors
                .get(&format!("adam.v.{param}"))
                .ok_or_else(|| format!("missing tensor `adam.v.{param}`"))?;
            for (n, x) in [(name.as_str(), t), (&format!("adam.v.{param}"), v)] {
                if x.shape() != shape.as_slice() {
                    return Err(format!(
                        "tensor `{n}` has shape {:?} but the config expects {:?}",
                        x.shape(),
                        shape
                    ));
                }
            }
            adam.moments.insert(param.to_string(), (t.data().to_vec(), v.data().to_vec()));
        }
        if let Some(orphan) = self
            .tensors
            .keys()
            .filter_map(|n| n.strip_prefix("adam.v."))
            .find(|p| !adam.moments.contains_key(*p))
        {
            return Err(format!("missing tensor `adam.m.{orphan}`"));
        }
        Ok(Some(adam))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let len = u16::try_from(name.len())
                .map_err(|_| Error::InvalidArgument(format!("tensor name too long: {name}")))?;
            let rank = u8::try_from(t.shape().len())
                .map_err(|_| Error::InvalidArgument(format!("tensor `{name}` has too many dimensions")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(rank);
            for &d in t.shape() {
                let d = u32::try_from(d)
                    .map_err(|_| Error::InvalidArgument(format!("tensor `{name}` dimension too large")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        let json = serde_json::to_vec(&self.config).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        Ok(out)
    }

    /// Parses the binary layout. Shapes are checked by [`restore`](Self::restore).
    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
        let mut r = Reader::new(bytes);
        let magic: [u8; 4] = r.take("magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(format!("bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported version {version}, expected {CHECKPOINT_VERSION}"));
        }
        let count = r.u32("tensor count")?;
        let mut tensors = BTreeMap::new();
        for i in 0..count {
            let len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.slice(len, "tensor name")?)
                .map_err(|_| format!("tensor {i} has a non-UTF-8 name"))?
                .to_string();
            let rank = r.u8("rank")? as usize;
            let shape = (0..rank)
                .map(|_| r.u32("dimension").map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|n| n.checked_mul(4).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| format!("truncated payload for tensor `{name}`"))?;
            let data = (0..n)
                .map(|_| r.f32("payload"))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let t = Tensor::new(shape, data).map_err(|e| e.to_string())?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(format!("duplicate tensor `{name}`"));
            }
        }
        let json_len = r.u32("config length")? as usize;
        let json = r.slice(json_len, "config")?;
        if r.remaining() != 0 {
            return Err(format!("{} trailing bytes", r.remaining()));
        }
        let config: NetConfig = serde_json::from_slice(json).map_err(|e| format!("config: {e}"))?;
        Ok(Checkpoint { config, tensors })
    }
}

pub fn save_checkpoint(path: &Path, net: &PoseNet, adam: Option<&AdamState>) -> Result<()> {
    let bytes = Checkpoint::from_net(net, adam).to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads and validates a checkpoint, returning the network in eval-ready
/// form plus any stored optimizer state.
pub fn load_checkpoint(path: &Path) -> Result<(PoseNet, Option<AdamState>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ckpt = Checkpoint::from_bytes(&bytes).map_err(|msg| Error::format(path, msg))?;
    ckpt.restore().map_err(|msg| Error::format(path, msg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posenet::{train_epoch, PointSegment};
    use crate::pose::Pose;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny(n_classes: usize) -> NetConfig {
        NetConfig {
            point_mlp_widths: vec![8, 16],
            head_widths: vec![16, 8],
            n_points: 16,
            n_classes,
            ..NetConfig::default()
        }
    }

    fn data(cfg: &NetConfig, rng: &mut ChaCha8Rng, b: usize) -> (Vec<PointSegment>, Vec<Pose>) {
        (0..b)
            .map(|i| {
                let gt = Pose::new(crate::so3::random_rotation(rng), Vector3::new(0.0, 0.1, 1.0));
                let pts = (0..cfg.n_points)
                    .map(|_| gt.transform(&Vector3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.03..0.03), 0.0)))
                    .collect();
                (PointSegment::new(pts, i % cfg.n_classes, cfg.n_classes).unwrap(), gt)
            })
            .unzip()
    }

    fn trained(cfg: NetConfig) -> (PoseNet, AdamState, Vec<PointSegment>) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = PoseNet::new(cfg.clone(), &mut rng).unwrap();
        let (segs, gts) = data(&cfg, &mut rng, 8);
        let mut adam = AdamState::default();
        train_epoch(&mut net, &segs, &gts, &mut adam, 4, &mut rng).unwrap();
        (net, adam, segs)
    }

    #[test]
    fn round_trip_predictions_are_bit_identical() {
        let (net, adam, segs) = trained(tiny(4));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_checkpoint(&path, &net, Some(&adam)).unwrap();
        let (loaded, loaded_adam) = load_checkpoint(&path).unwrap();
        let reference = net.to_f32_precision();
        assert_eq!(loaded, reference);
        assert_eq!(loaded.predict_batch(&segs).unwrap(), reference.predict_batch(&segs).unwrap());

        let loaded_adam = loaded_adam.unwrap();
        assert_eq!(loaded_adam.step, adam.step);
        assert_eq!(loaded_adam.moments.len(), adam.moments.len());
        assert_eq!(loaded_adam.lr, adam.lr as f32 as f64);

        // saving the loaded state reproduces the file
        let again = dir.path().join("again.ckpt");
        save_checkpoint(&again, &loaded, Some(&loaded_adam)).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
    }

    #[test]
    fn optimizer_state_is_optional() {
        let (net, _, _) = trained(tiny(2));
        let ckpt = Checkpoint::from_net(&net, None);
        assert!(!ckpt.has_optimizer());
        let parsed = Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap();
        let (_, adam) = parsed.restore().unwrap();
        assert!(adam.is_none());
    }

    #[test]
    fn header_layout() {
        let (net, _, _) = trained(tiny(2));
        let bytes = Checkpoint::from_net(&net, None).to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"CPSE");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let mut count = 0;
        net.visit(&mut |_, _| count += 1);
        net.visit_buffers(&mut |_, _| count += 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), count);
    }

    #[test]
    fn corruption_is_rejected() {
        let (net, adam, _) = trained(tiny(2));
        let bytes = Checkpoint::from_net(&net, Some(&adam)).to_bytes().unwrap();

        let mut bad = bytes.clone();
        bad[1] ^= 0xff;
        assert!(Checkpoint::from_bytes(&bad).unwrap_err().contains("magic"));

        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(Checkpoint::from_bytes(&bad).unwrap_err().contains("version"));

        for cut in [3, 11, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }

    #[test]
    fn class_count_mismatch_names_both_shapes() {
        let (net, _, _) = trained(tiny(5));
        let mut ckpt = Checkpoint::from_net(&net, None);
        ckpt.config.n_classes = 4;
        let err = ckpt.restore().unwrap_err();
        assert!(err.contains("[8, 8]") && err.contains("[7, 8]"), "{err}");

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.ckpt");
        fs::write(&path, ckpt.to_bytes().unwrap()).unwrap();
        let msg = load_checkpoint(&path).unwrap_err().to_string();
        assert!(msg.contains("k.ckpt") && msg.contains("[8, 8]"), "{msg}");
    }

    #[test]
    fn missing_and_extra_tensors_are_rejected() {
        let (net, _, _) = trained(tiny(2));
        let mut ckpt = Checkpoint::from_net(&net, None);
        ckpt.tensors.remove("rotation.out.bias");
        assert!(ckpt.restore().unwrap_err().contains("rotation.out.bias"));

        let mut ckpt = Checkpoint::from_net(&net, None);
        ckpt.tensors.insert("stray".into(), Tensor::scalar(1.0));
        assert!(ckpt.restore().unwrap_err().contains("stray"));
    }

    #[test]
    fn optimizer_moments_round_trip_at_f32() {
        let (net, adam, _) = trained(tiny(2));
        let bytes = Checkpoint::from_net(&net, Some(&adam)).to_bytes().unwrap();
        let (_, restored) = Checkpoint::from_bytes(&bytes).unwrap().restore().unwrap();
        let restored = restored.unwrap();
        for (name, (m, v)) in &adam.moments {
            let (rm, rv) = &restored.moments[name];
            assert!(m.iter().zip(rm).all(|(a, b)| *a as f32 as f64 == *b));
            assert!(v.iter().zip(rv).all(|(a, b)| *a as f32 as f64 == *b));
        }
    }
}
