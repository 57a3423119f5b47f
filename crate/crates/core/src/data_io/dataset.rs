use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bytes::Reader;
use super::models::{generate_primitive_model, PrimitiveKind};
use super::ply::{load_cloud, save_cloud};
use super::render::{model_spacing, random_occluder, render_view, RenderOptions};
use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::icp::ObjectModel;
use crate::pose::Pose;
use crate::sampling::{resample_to_n, PointCloud};
use crate::so3::{random_rotation, AxisAngle};

/// One observed object instance with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub segment: PointCloud,
    pub class_id: usize,
    pub gt: Pose,
    pub occlusion: f64,
}

/// Recipe for one object class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub kind: PrimitiveKind,
    pub dims: [f64; 3],
    pub points: usize,
    pub seed: u64,
}

impl ModelSpec {
    pub fn build(&self, class_id: usize) -> Result<ObjectModel> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        generate_primitive_model(self.kind, Vector3::from(self.dims), self.points, class_id, &mut rng)
    }
}

/// Four asymmetric blobs of distinct size and shape.
pub fn default_model_specs() -> Vec<ModelSpec> {
    let dims = [[0.10, 0.08, 0.06], [0.14, 0.07, 0.05], [0.08, 0.08, 0.11], [0.12, 0.10, 0.08]];
    dims.iter()
        .enumerate()
        .map(|(i, d)| ModelSpec {
            name: format!("blob_{i}"),
            kind: PrimitiveKind::AsymmetricBlob,
            dims: *d,
            points: 2048,
            seed: 1000 + i as u64,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub n_samples: usize,
    pub n_points: usize,
    pub seed: u64,
    /// Uniform range of the object's camera-frame depth, meters.
    pub depth_range: [f64; 2],
    /// Lateral offsets are drawn within this fraction of the half field of view.
    pub lateral_fraction: f64,
    pub render: RenderOptions,
    /// Views with fewer surviving points are redrawn.
    pub min_visible_points: usize,
    /// When set, rotations use a uniform axis and an angle uniform in
    /// `[0, max]` radians instead of the uniform distribution over SO(3).
    pub max_rotation_angle: Option<f64>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_samples: 2000,
            n_points: 256,
            seed: 0,
            depth_range: [0.5, 1.5],
            lateral_fraction: 0.5,
            render: RenderOptions::default(),
            min_visible_points: 32,
            max_rotation_angle: None,
        }
    }
}

const MAX_REDRAWS: usize = 1000;

/// Renders `cfg.n_samples` random views. Sample `i` depends only on
/// `cfg.seed + i`, so any subset can be regenerated independently.
pub fn make_dataset(models: &[ObjectModel], cfg: &DatasetConfig, cam: &CameraIntrinsics) -> Result<Vec<Sample>> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("no object models".into()));
    }
    if cfg.n_points == 0 {
        return Err(Error::InvalidArgument("n_points must be at least 1".into()));
    }
    let [z0, z1] = cfg.depth_range;
    if !(z0 > 0.0 && z1 >= z0) {
        return Err(Error::InvalidArgument(format!("bad depth range [{z0}, {z1}]")));
    }
    cam.validate()?;
    let spacings: Vec<f64> = models.iter().map(model_spacing).collect();
    (0..cfg.n_samples)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
            make_sample(models, &spacings, cfg, cam, &mut rng)
        })
        .collect()
}

fn make_sample(
    models: &[ObjectModel],
    spacings: &[f64],
    cfg: &DatasetConfig,
    cam: &CameraIntrinsics,
    rng: &mut ChaCha8Rng,
) -> Result<Sample> {
    let [z0, z1] = cfg.depth_range;
    let min_visible = cfg.min_visible_points.max(3);
    for _ in 0..MAX_REDRAWS {
        let k = rng.random_range(0..models.len());
        let model = &models[k];
        let rotation = match cfg.max_rotation_angle {
            None => random_rotation(rng),
            Some(max) => {
                let axis = loop {
                    let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    let n = v.norm();
                    if n > 1e-6 && n <= 1.0 {
                        break v / n;
                    }
                };
                AxisAngle(axis * rng.random_range(0.0..=max.min(std::f64::consts::PI)))
            }
        };
        let z = if z1 > z0 { rng.random_range(z0..=z1) } else { z0 };
        let x_max = cfg.lateral_fraction * z * cam.cx.min(cam.width as f64 - cam.cx) / cam.fx;
        let y_max = cfg.lateral_fraction * z * cam.cy.min(cam.height as f64 - cam.cy) / cam.fy;
        let x = rng.random_range(-x_max..=x_max);
        let y = rng.random_range(-y_max..=y_max);
        let gt = Pose::new(rotation, Vector3::new(x, y, z));
        let occluder = if rng.random_bool(cfg.render.occluder_probability.clamp(0.0, 1.0)) {
            Some(random_occluder(model, &gt, cam, cfg.render.occluder_max_coverage, rng)?)
        } else {
            None
        };
        let view = match render_view(model, &gt, cam, spacings[k], occluder, cfg.render.noise_sigma, rng) {
            Ok(v) => v,
            Err(Error::InvalidArgument(_)) => continue,
            Err(e) => return Err(e),
        };
        if view.cloud.len() < min_visible {
            continue;
        }
        let segment = resample_to_n(&view.cloud, cfg.n_points, rng)?;
        return Ok(Sample {
            segment,
            class_id: model.class_id,
            gt,
            occlusion: view.occlusion,
        });
    }
    Err(Error::InvalidArgument(format!(
        "no view with {min_visible} visible points after {MAX_REDRAWS} draws"
    )))
}

/// Description of a dataset directory, stored as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub classes: Vec<ModelSpec>,
    /// PLY file of each class model, relative to the dataset directory.
    pub model_files: Vec<String>,
    pub intrinsics: CameraIntrinsics,
    pub n_samples: usize,
    pub n_points: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    pub config: DatasetConfig,
}

/// Dataset held in memory: manifest, class models, samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub models: Vec<ObjectModel>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Builds the models from `specs` and renders the samples.
    pub fn generate(specs: &[ModelSpec], cfg: &DatasetConfig, cam: &CameraIntrinsics) -> Result<Self> {
        let models = specs
            .iter()
            .enumerate()
            .map(|(i, s)| s.build(i))
            .collect::<Result<Vec<_>>>()?;
        let samples = make_dataset(&models, cfg, cam)?;
        let manifest = Manifest {
            format_version: 1,
            classes: specs.to_vec(),
            model_files: specs.iter().map(|s| format!("models/{}.ply", s.name)).collect(),
            intrinsics: *cam,
            n_samples: samples.len(),
            n_points: cfg.n_points,
            seed: cfg.seed,
            noise_sigma: cfg.render.noise_sigma,
            config: cfg.clone(),
        };
        Ok(Dataset { manifest, models, samples })
    }

    pub fn class_names(&self) -> Vec<String> {
        self.manifest.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn n_classes(&self) -> usize {
        self.manifest.classes.len()
    }
}

pub fn sample_file_name(index: usize) -> String {
    format!("samples/{index:06}.bin")
}

/// Writes `manifest.json`, the class models as PLY, and one little-endian
/// binary file per sample.
pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir.join("samples")).map_err(|e| Error::io(dir, e))?;
    fs::create_dir_all(dir.join("models")).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&ds.manifest).map_err(|e| Error::Json {
        path: manifest_path.clone(),
        source: e,
    })?;
    fs::write(&manifest_path, json + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    for (model, file) in ds.models.iter().zip(&ds.manifest.model_files) {
        save_cloud(&dir.join(file), &model.cloud())?;
    }
    for (i, s) in ds.samples.iter().enumerate() {
        let path = dir.join(sample_file_name(i));
        fs::write(&path, encode_sample(s)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json { path, source: e })
}

/// Class models listed in the manifest, loaded from their PLY files.
pub fn load_models(dir: &Path, manifest: &Manifest) -> Result<Vec<ObjectModel>> {
    manifest
        .model_files
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let path = dir.join(f);
            let cloud = load_cloud(&path)?;
            ObjectModel::new(cloud.points, i).map_err(|e| Error::format(&path, e.to_string()))
        })
        .collect()
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = load_manifest(dir)?;
    let models = load_models(dir, &manifest)?;
    let sample_dir = dir.join("samples");
    let on_disk = fs::read_dir(&sample_dir)
        .map_err(|e| Error::io(&sample_dir, e))?
        .filter(|e| e.as_ref().map(|e| e.path().extension().is_some_and(|x| x == "bin")).unwrap_or(false))
        .count();
    if on_disk != manifest.n_samples {
        let missing = (0..manifest.n_samples)
            .map(|i| dir.join(sample_file_name(i)))
            .find(|p| !p.exists());
        let msg = format!("manifest lists {} samples, directory has {on_disk}", manifest.n_samples);
        return Err(match missing {
            Some(p) => Error::format(p, format!("missing sample file ({msg})")),
            None => Error::format(sample_dir, msg),
        });
    }
    let mut samples = Vec::with_capacity(manifest.n_samples);
    for i in 0..manifest.n_samples {
        let path = dir.join(sample_file_name(i));
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let s = decode_sample(&bytes).map_err(|msg| Error::format(&path, msg))?;
        if s.class_id >= models.len() {
            return Err(Error::format(&path, format!("class {} has no model", s.class_id)));
        }
        samples.push(s);
    }
    Ok(Dataset { manifest, models, samples })
}

fn encode_sample(s: &Sample) -> Result<Vec<u8>> {
    let n = u32::try_from(s.segment.len()).map_err(|_| Error::InvalidArgument("segment too large".into()))?;
    let class = u16::try_from(s.class_id).map_err(|_| Error::InvalidArgument("class id exceeds u16".into()))?;
    let mut out = Vec::with_capacity(4 + 12 * s.segment.len() + 30);
    out.extend_from_slice(&n.to_le_bytes());
    for p in &s.segment.points {
        for c in p.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    out.extend_from_slice(&class.to_le_bytes());
    for c in s.gt.rotation.0.iter().chain(s.gt.translation.iter()) {
        out.extend_from_slice(&(*c as f32).to_le_bytes());
    }
    out.extend_from_slice(&(s.occlusion as f32).to_le_bytes());
    Ok(out)
}

fn decode_sample(bytes: &[u8]) -> std::result::Result<Sample, String> {
    let mut r = Reader::new(bytes);
    let n = r.u32("point count")? as usize;
    let expected = 4 + 12 * n + 2 + 28;
    if bytes.len() != expected {
        return Err(format!("expected {expected} bytes for {n} points, found {}", bytes.len()));
    }
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        points.push(Vector3::new(r.f32("point")?, r.f32("point")?, r.f32("point")?));
    }
    let class_id = r.u16("class id")? as usize;
    let rot = Vector3::new(r.f32("rotation")?, r.f32("rotation")?, r.f32("rotation")?);
    let t = Vector3::new(r.f32("translation")?, r.f32("translation")?, r.f32("translation")?);
    let occlusion = r.f32("occlusion")?;
    Ok(Sample {
        segment: PointCloud::new(points),
        class_id,
        gt: Pose {
            rotation: AxisAngle(rot),
            translation: t,
        },
        occlusion,
    })
}

/// Paths of every file in a dataset directory, sorted.
pub fn dataset_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for sub in ["", "models", "samples"] {
        let d = dir.join(sub);
        for e in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let p = e.map_err(|e| Error::io(&d, e))?.path();
            if p.is_file() {
                files.push(p);
            }
        }
    }
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::average_distance;

    fn small() -> (Vec<ModelSpec>, DatasetConfig) {
        let specs: Vec<ModelSpec> = default_model_specs()
            .into_iter()
            .map(|mut s| {
                s.points = 256;
                s
            })
            .collect();
        let cfg = DatasetConfig { n_samples: 12, seed: 5, ..DatasetConfig::default() };
        (specs, cfg)
    }

    #[test]
    fn samples_have_n_points_and_consistent_gt() {
        let (specs, cfg) = small();
        let ds = Dataset::generate(&specs, &cfg, &CameraIntrinsics::default()).unwrap();
        assert_eq!(ds.samples.len(), 12);
        for s in &ds.samples {
            assert_eq!(s.segment.len(), 256);
            assert!((0.0..=1.0).contains(&s.occlusion));
            assert_eq!(average_distance(&ds.models[s.class_id], &s.gt, &s.gt).unwrap(), 0.0);
            assert!(s.gt.rotation.angle() <= std::f64::consts::PI);
        }
    }

    #[test]
    fn sample_depends_only_on_its_seed() {
        let (specs, cfg) = small();
        let cam = CameraIntrinsics::default();
        let a = Dataset::generate(&specs, &cfg, &cam).unwrap();
        let shifted = DatasetConfig { seed: cfg.seed + 3, n_samples: 4, ..cfg.clone() };
        let b = Dataset::generate(&specs, &shifted, &cam).unwrap();
        assert_eq!(&a.samples[3..7], &b.samples[..]);
    }

    #[test]
    fn round_trip_and_byte_stability() {
        let (specs, cfg) = small();
        let cam = CameraIntrinsics::default();
        let ds = Dataset::generate(&specs, &cfg, &cam).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        save_dataset(d1.path(), &ds).unwrap();
        save_dataset(d2.path(), &Dataset::generate(&specs, &cfg, &cam).unwrap()).unwrap();
        let f1 = dataset_files(d1.path()).unwrap();
        let f2 = dataset_files(d2.path()).unwrap();
        assert_eq!(f1.len(), 2 + 4 + 12 - 1);
        for (a, b) in f1.iter().zip(&f2) {
            assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
        }

        let back = load_dataset(d1.path()).unwrap();
        assert_eq!(back.manifest, ds.manifest);
        for (a, b) in ds.samples.iter().zip(&back.samples) {
            assert_eq!(a.class_id, b.class_id);
            let round = |v: f64| v as f32 as f64;
            assert_eq!(round(a.occlusion), b.occlusion);
            for (p, q) in a.segment.points.iter().zip(&b.segment.points) {
                assert_eq!(p.map(round), *q);
            }
            assert_eq!(a.gt.translation.map(round), b.gt.translation);
        }
        let resaved = tempfile::tempdir().unwrap();
        save_dataset(resaved.path(), &back).unwrap();
        for (a, b) in f1.iter().zip(&dataset_files(resaved.path()).unwrap()) {
            assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap(), "{}", a.display());
        }
    }

    #[test]
    fn missing_and_truncated_files_rejected() {
        let (specs, mut cfg) = small();
        cfg.n_samples = 3;
        let ds = Dataset::generate(&specs, &cfg, &CameraIntrinsics::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &ds).unwrap();
        let victim = dir.path().join(sample_file_name(1));
        let bytes = fs::read(&victim).unwrap();

        fs::remove_file(&victim).unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("000001.bin"), "{err}");

        fs::write(&victim, &bytes[..bytes.len() - 3]).unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("000001.bin") && err.contains("bytes"), "{err}");
    }

    #[test]
    fn empty_model_list_rejected() {
        assert!(make_dataset(&[], &DatasetConfig::default(), &CameraIntrinsics::default()).is_err());
    }
}
