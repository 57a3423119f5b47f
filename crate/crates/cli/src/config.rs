use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use pointpose::icp::IcpConfig;
use pointpose::posenet::{NetConfig, RotationLoss, RotationRepr, SharedLayers};
use serde::{Deserialize, Serialize};

/// Every tunable setting of a run. Config files use the same kebab-case
/// keys as the command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub n_samples: usize,
    pub n_test: usize,
    pub n_points: usize,
    pub noise_sigma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub alpha: f64,
    pub point_widths: Vec<usize>,
    pub head_widths: Vec<usize>,
    pub rotation_repr: RotationRepr,
    pub rotation_loss: RotationLoss,
    pub shared_layers: SharedLayers,
    pub output_init_gain: f64,
    pub save_every: usize,
    pub icp_max_iterations: usize,
    pub icp_radius: f64,
    pub icp_decay: f64,
    pub icp_min_correspondences: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let net = NetConfig::default();
        let icp = IcpConfig::default();
        RunConfig {
            seed: 0,
            n_samples: 2000,
            n_test: 400,
            n_points: net.n_points,
            noise_sigma: 0.003,
            epochs: 90,
            batch_size: 128,
            lr: 0.0008,
            alpha: net.alpha,
            point_widths: net.point_mlp_widths,
            head_widths: net.head_widths,
            rotation_repr: net.rotation_repr,
            rotation_loss: net.rotation_loss,
            shared_layers: net.shared_layers,
            output_init_gain: net.output_init_gain,
            save_every: 10,
            icp_max_iterations: icp.max_iterations,
            icp_radius: icp.initial_radius,
            icp_decay: icp.radius_decay,
            icp_min_correspondences: icp.min_correspondences,
        }
    }
}

impl RunConfig {
    pub fn net(&self, n_classes: usize, n_points: usize) -> NetConfig {
        NetConfig {
            point_mlp_widths: self.point_widths.clone(),
            head_widths: self.head_widths.clone(),
            rotation_repr: self.rotation_repr,
            rotation_loss: self.rotation_loss,
            shared_layers: self.shared_layers,
            n_points,
            n_classes,
            alpha: self.alpha,
            output_init_gain: self.output_init_gain,
            ..NetConfig::default()
        }
    }

    pub fn icp(&self) -> IcpConfig {
        IcpConfig {
            max_iterations: self.icp_max_iterations,
            initial_radius: self.icp_radius,
            radius_decay: self.icp_decay,
            min_correspondences: self.icp_min_correspondences,
            ..IcpConfig::default()
        }
    }
}

/// Comma-separated layer widths.
#[derive(Debug, Clone, PartialEq)]
pub struct Widths(pub Vec<usize>);

fn parse_widths(s: &str) -> Result<Widths, String> {
    s.split(',')
        .map(|w| w.trim().parse::<usize>().map_err(|e| format!("bad width `{w}`: {e}")))
        .collect::<Result<_, _>>()
        .map(Widths)
}

fn parse_repr(s: &str) -> Result<RotationRepr, String> {
    match s {
        "axis_angle" | "axis-angle" => Ok(RotationRepr::AxisAngle),
        "quaternion" => Ok(RotationRepr::Quaternion),
        _ => Err(format!("expected axis-angle or quaternion, got `{s}`")),
    }
}

fn parse_loss(s: &str) -> Result<RotationLoss, String> {
    match s {
        "geodesic" => Ok(RotationLoss::Geodesic),
        "l2" | "L2" => Ok(RotationLoss::L2),
        _ => Err(format!("expected geodesic or l2, got `{s}`")),
    }
}

/// Flags shared by every command. Anything given here overrides the
/// config file, which overrides the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON file with flat keys named like the flags
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub n_points: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Comma-separated per-point layer widths
    #[arg(long, value_parser = parse_widths)]
    pub point_widths: Option<Widths>,
    /// Comma-separated hidden head widths
    #[arg(long, value_parser = parse_widths)]
    pub head_widths: Option<Widths>,
    /// axis-angle or quaternion
    #[arg(long, value_parser = parse_repr)]
    pub rotation_repr: Option<RotationRepr>,
    /// geodesic or l2
    #[arg(long, value_parser = parse_loss)]
    pub rotation_loss: Option<RotationLoss>,
    /// Number of shared per-point layers, or `all`
    #[arg(long)]
    pub shared_layers: Option<SharedLayers>,
    #[arg(long)]
    pub output_init_gain: Option<f64>,
    /// Write the checkpoint every this many epochs
    #[arg(long)]
    pub save_every: Option<usize>,
    #[arg(long)]
    pub icp_max_iterations: Option<usize>,
    #[arg(long)]
    pub icp_radius: Option<f64>,
    #[arg(long)]
    pub icp_decay: Option<f64>,
    #[arg(long)]
    pub icp_min_correspondences: Option<usize>,
}

macro_rules! apply {
    ($cfg:ident, $o:ident, $($field:ident),*) => {
        $(if let Some(v) = $o.$field.clone() { $cfg.$field = v; })*
    };
}

impl Overrides {
    pub fn resolve(&self) -> Result<RunConfig, String> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => RunConfig::default(),
        };
        let o = self;
        apply!(
            cfg, o, seed, n_samples, n_test, n_points, noise_sigma, epochs, batch_size, lr, alpha, rotation_repr, rotation_loss, shared_layers, output_init_gain, save_every,
            icp_max_iterations, icp_radius, icp_decay, icp_min_correspondences
        );
        if let Some(Widths(w)) = &self.point_widths {
            cfg.point_widths = w.clone();
        }
        if let Some(Widths(w)) = &self.head_widths {
            cfg.head_widths = w.clone();
        }
        Ok(cfg)
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}
