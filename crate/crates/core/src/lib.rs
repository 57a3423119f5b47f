//! Pose regression for known objects from depth-derived point clouds.
//!
//! Two PointNet-style networks regress an axis-angle rotation (trained with
//! the geodesic distance on SO(3)) and a translation residual relative to the
//! segment centroid. Estimates are refined with point-to-point ICP and scored
//! with the AD / ADS / AUC metrics.

pub mod autodiff;
pub mod camera;
pub mod data_io;
pub mod error;
pub mod eval;
pub mod icp;
pub mod metrics;
pub mod pose;
pub mod posenet;
pub mod sampling;
pub mod so3;

pub use error::{Error, Result};
pub use pose::Pose;
