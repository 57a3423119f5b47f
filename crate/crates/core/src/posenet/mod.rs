//! The rotation and translation networks, their losses, and training.
//!
//! Each network is a PointNet-style base: a per-point MLP with shared
//! weights, max pooling over points, and a fully connected regression head.
//! The rotation network regresses an axis-angle vector trained with the
//! geodesic distance on SO(3); the translation network sees mean-centered
//! points and regresses the offset of the object origin from that mean.

mod config;
mod loss;
mod network;
mod train;

pub use config::{NetConfig, RotationInput, RotationLoss, RotationRepr, SharedLayers};
pub use loss::{geodesic_rotation_loss, l2_rotation_loss, quaternion_to_axis_angle, total_loss, translation_loss};
pub use network::{poses_from_outputs, Bindings, Layer, NetInputs, Outputs, PointSegment, PoseNet};
pub use train::{batch_gradients, batch_loss, predict_all, segments_of, train_epoch, BatchLoss, EpochMetrics};
