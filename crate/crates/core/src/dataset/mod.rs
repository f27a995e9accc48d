//! Paired-sample ingestion and synthetic scene generation.

pub mod manifest;
pub mod synth;

pub use manifest::{load_manifest, parse_manifest_str, write_dataset, ManifestRecord, OutOfBoundsPolicy};
pub use synth::{synth_batch, synth_batch_with, synth_scene, synth_scene_with, Misalign, SynthConfig};
