use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationRepr {
    AxisAngle,
    /// 4-d head, normalized and converted to axis-angle before the loss.
    Quaternion,
}

impl RotationRepr {
    pub fn out_dim(self) -> usize {
        match self {
            RotationRepr::AxisAngle => 3,
            RotationRepr::Quaternion => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationLoss {
    Geodesic,
    /// Euclidean distance between axis-angle vectors.
    L2,
}

/// Which coordinates the rotation network sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationInput {
    Raw,
    Centered,
}

/// How many layers the rotation and translation networks have in common.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SharedLayers {
    /// The first `n` per-point layers.
    Count(usize),
    /// Every layer except the two output layers.
    All,
}

impl SharedLayers {
    pub fn is_none(self) -> bool {
        self == SharedLayers::Count(0)
    }
}

impl fmt::Display for SharedLayers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SharedLayers::Count(n) => write!(f, "{n}"),
            SharedLayers::All => f.write_str("all"),
        }
    }
}

impl FromStr for SharedLayers {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(SharedLayers::All);
        }
        s.parse()
            .map(SharedLayers::Count)
            .map_err(|_| Error::InvalidArgument(format!("shared layers must be a count or `all`, got `{s}`")))
    }
}

impl Serialize for SharedLayers {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SharedLayers::Count(n) => s.serialize_u64(*n as u64),
            SharedLayers::All => s.serialize_str("all"),
        }
    }
}

impl<'de> Deserialize<'de> for SharedLayers {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(usize),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(n) => Ok(SharedLayers::Count(n)),
            Raw::Name(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Architecture and loss settings of the rotation/translation network pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    /// Output widths of the shared per-point MLP layers.
    pub point_mlp_widths: Vec<usize>,
    /// Hidden widths of the regression head after max pooling.
    pub head_widths: Vec<usize>,
    /// Scales every hidden width (rounded, at least 1).
    pub width_multiplier: f64,
    pub rotation_repr: RotationRepr,
    pub rotation_loss: RotationLoss,
    pub rotation_input: RotationInput,
    pub shared_layers: SharedLayers,
    pub n_points: usize,
    pub n_classes: usize,
    /// Weight of the translation loss in the total loss.
    pub alpha: f64,
    /// Multiplies the He standard deviation of the two output layers.
    pub output_init_gain: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            point_mlp_widths: vec![64, 128, 1024],
            head_widths: vec![512, 256],
            width_multiplier: 1.0,
            rotation_repr: RotationRepr::AxisAngle,
            rotation_loss: RotationLoss::Geodesic,
            rotation_input: RotationInput::Raw,
            shared_layers: SharedLayers::Count(0),
            n_points: 256,
            n_classes: 4,
            alpha: 10.0,
            output_init_gain: 0.01,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.point_mlp_widths.is_empty() {
            return Err(Error::InvalidArgument("at least one per-point layer is required".into()));
        }
        if self.point_mlp_widths.iter().chain(&self.head_widths).any(|&w| w == 0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        if !(self.width_multiplier > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "width multiplier must be positive, got {}",
                self.width_multiplier
            )));
        }
        if self.n_points == 0 || self.n_classes == 0 {
            return Err(Error::InvalidArgument("n_points and n_classes must be positive".into()));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if !(self.output_init_gain >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "output init gain must be non-negative, got {}",
                self.output_init_gain
            )));
        }
        if let SharedLayers::Count(n) = self.shared_layers {
            if n > self.point_mlp_widths.len() {
                return Err(Error::InvalidArgument(format!(
                    "cannot share {n} layers, the per-point MLP has {}",
                    self.point_mlp_widths.len()
                )));
            }
        }
        Ok(())
    }

    pub fn out_dim(&self) -> usize {
        self.rotation_repr.out_dim()
    }

    pub fn in_channels(&self) -> usize {
        3 + self.n_classes
    }

    fn scaled(&self, w: usize) -> usize {
        ((w as f64 * self.width_multiplier).round() as usize).max(1)
    }

    pub fn point_widths(&self) -> Vec<usize> {
        self.point_mlp_widths.iter().map(|&w| self.scaled(w)).collect()
    }

    pub fn head_hidden_widths(&self) -> Vec<usize> {
        self.head_widths.iter().map(|&w| self.scaled(w)).collect()
    }

    /// Number of leading per-point layers computed once for both tasks.
    pub fn shared_point_layers(&self) -> usize {
        match self.shared_layers {
            SharedLayers::Count(n) => n,
            SharedLayers::All => self.point_mlp_widths.len(),
        }
    }

    /// Coordinates seen by the rotation branch. A shared trunk has a single
    /// input, the mean-centered one.
    pub fn effective_rotation_input(&self) -> RotationInput {
        if self.shared_layers.is_none() {
            self.rotation_input
        } else {
            RotationInput::Centered
        }
    }
}
