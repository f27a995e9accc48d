//! Multispectral (RGB + thermal) detection training-technique bench.
//!
//! The crate implements pixel-, feature- and decision-level fusion,
//! dual-modality augmentation, feature-based and flow-based registration,
//! detection metrics (AP, mAP, log-average miss rate), a synthetic paired
//! scene generator and a seeded experiment harness that composes them.
//!
//! All rasters are `f64` row-major; images hold intensities in `[0, 1]`.
//! Every stochastic operation takes a [`Seed`], and identical seeds produce
//! identical results on every platform.

pub mod error;
pub mod rng;
pub mod image;
pub mod geometry;
pub mod detection;
pub mod sample;
pub mod io;
pub mod pixel_fusion;
pub mod feature_fusion;
pub mod decision_fusion;
pub mod augmentation;
pub mod registration;
pub mod metrics;
pub mod dataset;
pub mod harness;

pub use crate::detection::{Detection, DetectionSet, LabeledBox, Modality};
pub use crate::error::{Error, Result};
pub use crate::geometry::{BBox, FlowField, PlanarTransform, PointMatch, PointMatchSet, TransformKind};
pub use crate::image::{FeatureMap, Image, Raster};
pub use crate::rng::{derive_seed, Seed, SplitMix64};
pub use crate::sample::{validate_pair, PairedSample, SampleMeta, ValidatedPair};
