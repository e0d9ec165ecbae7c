//! On-disk formats: tensor stores, checkpoints, manifests, assignment files
//! and run configuration.

mod checkpoint;
mod config;
mod manifest;
mod store;

pub use checkpoint::{Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{default_beta_grid, RunConfig, CONFIG_KEYS};
pub use manifest::{load_assignments, save_assignments, Assignment, DatasetManifest, ManifestRow};
pub use store::{
    load_records, read_records, save_records, write_records, FeatureStore, TensorRecord,
    STORE_MAGIC,
};
