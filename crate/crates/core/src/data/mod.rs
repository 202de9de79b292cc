//! Synthetic data generation and the on-disk formats: PPM images, the
//! CSV manifest with description files, and binary checkpoints.

pub mod checkpoint;
pub mod dataset;
pub mod manifest;
pub mod ppm;
pub mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use dataset::{load_dataset, Dataset};
pub use manifest::{load_manifest, scan_manifest, validate_record, SampleRecord, Split};
pub use synth::{assign_classes, generate_synthetic, synthesize, BirdAttributes, SynthSpec};
