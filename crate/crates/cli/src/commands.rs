use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use pointpose::autodiff::AdamState;
use pointpose::camera::CameraIntrinsics;
use pointpose::data_io::{
    default_model_specs, load_checkpoint, load_cloud, load_dataset, save_checkpoint, save_dataset, Dataset,
    DatasetConfig, RenderOptions,
};
use pointpose::eval::evaluate;
use pointpose::icp::{icp_refine, IcpStop, ObjectModel};
use pointpose::posenet::{segments_of, train_epoch, PointSegment, PoseNet};
use pointpose::sampling::resample_to_n;
use pointpose::so3::AxisAngle;
use pointpose::Pose;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Axis-angle then translation, 9 significant digits each.
pub fn format_pose(p: &Pose) -> String {
    p.rotation
        .0
        .iter()
        .chain(p.translation.iter())
        .map(|v| format!("{v:.8e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn parse_pose(s: &str) -> Result<Pose, String> {
    let v = s
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| format!("bad pose value `{t}`: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    if v.len() != 6 {
        return Err(format!("pose needs 6 numbers (rx ry rz tx ty tz), got {}", v.len()));
    }
    Ok(Pose {
        rotation: AxisAngle::new(v[0], v[1], v[2]),
        translation: Vector3::new(v[3], v[4], v[5]),
    })
}

fn dataset_config(cfg: &RunConfig, n_samples: usize, seed: u64) -> DatasetConfig {
    DatasetConfig {
        n_samples,
        n_points: cfg.n_points,
        seed,
        render: RenderOptions {
            noise_sigma: cfg.noise_sigma,
            ..RenderOptions::default()
        },
        ..DatasetConfig::default()
    }
}

/// Writes `out/train` and, unless `n_test` is zero, `out/test`. Sample `i`
/// of the test split uses seed `seed + n_samples + i`, so the two splits
/// never share a sample seed.
pub fn generate(cfg: &RunConfig, out: &Path) -> Result<(), String> {
    let cam = CameraIntrinsics::default();
    let specs = default_model_specs();
    let mut splits = vec![("train", cfg.n_samples, cfg.seed)];
    if cfg.n_test > 0 {
        splits.push(("test", cfg.n_test, cfg.seed + cfg.n_samples as u64));
    }
    for (name, n, seed) in splits {
        let start = Instant::now();
        let ds = Dataset::generate(&specs, &dataset_config(cfg, n, seed), &cam).map_err(err)?;
        let dir = out.join(name);
        save_dataset(&dir, &ds).map_err(err)?;
        let mean_occ = ds.samples.iter().map(|s| s.occlusion).sum::<f64>() / n.max(1) as f64;
        println!(
            "split={name} samples={n} classes={} points={} seed={seed} noise_sigma={} mean_occlusion={mean_occ:.3} time_s={:.1} dir={}",
            ds.n_classes(),
            ds.manifest.n_points,
            ds.manifest.noise_sigma,
            start.elapsed().as_secs_f64(),
            dir.display()
        );
    }
    Ok(())
}

fn append_line(path: Option<&Path>, line: &str) -> Result<(), String> {
    println!("{line}");
    if let Some(path) = path {
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        writeln!(f, "{line}").map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(())
}

pub fn train(cfg: &RunConfig, data: &Path, out: &Path, resume: Option<&Path>, log: Option<&Path>) -> Result<(), String> {
    let ds = load_dataset(data).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut net, mut adam) = match resume {
        Some(path) => {
            let (net, adam) = load_checkpoint(path).map_err(err)?;
            let adam = adam.unwrap_or_else(|| AdamState::new(cfg.lr));
            (net, adam)
        }
        None => {
            let net_cfg = cfg.net(ds.n_classes(), ds.manifest.n_points);
            (PoseNet::new(net_cfg, &mut rng).map_err(err)?, AdamState::new(cfg.lr))
        }
    };
    if net.config.n_classes != ds.n_classes() || net.config.n_points != ds.manifest.n_points {
        return Err(format!(
            "{}: network expects {} classes of {} points, dataset has {} classes of {}",
            data.display(),
            net.config.n_classes,
            net.config.n_points,
            ds.n_classes(),
            ds.manifest.n_points
        ));
    }
    let segments = segments_of(&ds.samples, ds.n_classes()).map_err(err)?;
    let gts: Vec<Pose> = ds.samples.iter().map(|s| s.gt).collect();
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let m = train_epoch(&mut net, &segments, &gts, &mut adam, cfg.batch_size, &mut rng).map_err(err)?;
        append_line(
            log,
            &format!(
                "epoch={epoch} loss={:.6} rot_err_deg={:.4} trans_err_mm={:.4} time_s={:.2}",
                m.loss,
                m.rotation_error.to_degrees(),
                m.translation_error * 1000.0,
                start.elapsed().as_secs_f64()
            ),
        )?;
        if epoch == cfg.epochs || (cfg.save_every > 0 && epoch % cfg.save_every == 0) {
            save_checkpoint(out, &net, Some(&adam)).map_err(err)?;
        }
    }
    if cfg.epochs == 0 {
        save_checkpoint(out, &net, Some(&adam)).map_err(err)?;
    }
    Ok(())
}

fn default_results_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.file_name().unwrap_or_default().to_os_string();
    name.push(".results.json");
    checkpoint.with_file_name(name)
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path, data: &Path, icp: bool, out: Option<&Path>) -> Result<(), String> {
    let (net, _) = load_checkpoint(checkpoint).map_err(err)?;
    let ds = load_dataset(data).map_err(err)?;
    if ds.manifest.n_points != net.config.n_points {
        return Err(format!(
            "{}: segments have {} points, the network expects {}",
            data.display(),
            ds.manifest.n_points,
            net.config.n_points
        ));
    }
    let icp_cfg = cfg.icp();
    let report = evaluate(&net, &ds, icp.then_some(&icp_cfg), cfg.batch_size.max(1))
        .map_err(|e| format!("{}: {e}", data.display()))?;
    print!("{}", report.to_text());
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| default_results_path(checkpoint));
    let json = serde_json::to_string_pretty(&report).map_err(err)?;
    fs::write(&path, json).map_err(|e| format!("{}: {e}", path.display()))?;
    println!("results={}", path.display());
    Ok(())
}

fn load_model(path: &Path, class_id: usize) -> Result<ObjectModel, String> {
    let cloud = load_cloud(path).map_err(err)?;
    ObjectModel::new(cloud.points, class_id).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_pose(pose: &Pose, out: Option<&Path>) -> Result<(), String> {
    let line = format_pose(pose);
    println!("{line}");
    if let Some(path) = out {
        fs::write(path, format!("{line}\n")).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(())
}

pub fn infer(
    cfg: &RunConfig,
    checkpoint: &Path,
    cloud: &Path,
    class_id: usize,
    icp_model: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), String> {
    let (net, _) = load_checkpoint(checkpoint).map_err(err)?;
    let model = icp_model.map(|p| load_model(p, class_id)).transpose()?;
    let observed = load_cloud(cloud).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let points = resample_to_n(&observed, net.config.n_points, &mut rng).map_err(|e| format!("{}: {e}", cloud.display()))?;
    let segment = PointSegment::new(points.points, class_id, net.config.n_classes)
        .map_err(|e| format!("class {class_id}: {e}"))?;
    let mut pose = net.predict_pose(&segment).map_err(err)?;
    if let Some(model) = model {
        pose = icp_refine(&model, &observed, pose, &cfg.icp()).map_err(err)?.pose;
    }
    write_pose(&pose, out)
}

pub fn refine(cfg: &RunConfig, init: &str, cloud: &Path, model: &Path, out: Option<&Path>) -> Result<(), String> {
    let init = parse_pose(init)?;
    let observed = load_cloud(cloud).map_err(err)?;
    let model = load_model(model, 0)?;
    let result = icp_refine(&model, &observed, init, &cfg.icp()).map_err(err)?;
    for (i, it) in result.iterations.iter().enumerate() {
        println!(
            "iter={} radius={:.6e} rms={:.6e} matches={}",
            i + 1,
            it.radius,
            it.rms,
            it.matches.len()
        );
    }
    let stop = match result.stop {
        IcpStop::MaxIterations => "max_iterations",
        IcpStop::Converged => "converged",
        IcpStop::Starved => "starved",
        IcpStop::Degenerate => "degenerate",
    };
    println!("stop={stop}");
    write_pose(&result.pose, out)
}
