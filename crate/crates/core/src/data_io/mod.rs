//! Synthetic data generation and file formats.

mod bytes;
mod checkpoint;
mod dataset;
mod depth;
mod models;
mod ply;
mod render;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dataset::{
    dataset_files, default_model_specs, load_dataset, load_manifest, load_models, make_dataset, sample_file_name,
    save_dataset, Dataset, DatasetConfig, Manifest, ModelSpec, Sample,
};
pub use depth::{backproject, rasterize, DepthFrame};
pub use models::{generate_primitive_model, PrimitiveKind};
pub use ply::{load_cloud, save_cloud};
pub use render::{model_spacing, random_occluder, render_partial_view, render_view, Occluder, RenderOptions, RenderedView};
