//! Paired RGB/TIR inputs.

use serde::{Deserialize, Serialize};

use crate::detection::LabeledBox;
use crate::error::{Error, Result};
use crate::geometry::PlanarTransform;
use crate::image::{Image, Raster};

/// An RGB/TIR pair whose channel counts have been checked. Sizes may differ;
/// registration resolves that.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedPair {
    pub rgb: Image,
    pub tir: Image,
}

impl ValidatedPair {
    pub fn rgb_dims(&self) -> (usize, usize) {
        self.rgb.dims()
    }

    pub fn tir_dims(&self) -> (usize, usize) {
        self.tir.dims()
    }

    pub fn same_dims(&self) -> bool {
        self.rgb_dims() == self.tir_dims()
    }
}

pub fn validate_pair(rgb: Image, tir: Image) -> Result<ValidatedPair> {
    for img in [&rgb, &tir] {
        if img.height() == 0 || img.width() == 0 {
            return Err(Error::EmptyImage);
        }
    }
    if rgb.channels() != 3 {
        return Err(Error::ChannelMismatch {
            expected: 3,
            found: rgb.channels(),
        });
    }
    if tir.channels() != 1 {
        return Err(Error::ChannelMismatch {
            expected: 1,
            found: tir.channels(),
        });
    }
    Ok(ValidatedPair { rgb, tir })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub scene_seed: u64,
    /// Maps RGB pixel coordinates to TIR pixel coordinates when the pair was
    /// generated misaligned.
    pub injected_transform: Option<PlanarTransform>,
    pub illumination: f64,
}

/// One RGB/TIR pair with ground-truth boxes in the RGB frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub rgb: Image,
    pub tir: Image,
    pub boxes: Vec<LabeledBox>,
    pub meta: SampleMeta,
}

impl PairedSample {
    pub fn new(rgb: Image, tir: Image, boxes: Vec<LabeledBox>) -> Result<Self> {
        let pair = validate_pair(rgb, tir)?;
        Ok(Self {
            rgb: pair.rgb,
            tir: pair.tir,
            boxes,
            meta: SampleMeta::default(),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.rgb.dims()
    }

    /// True when both images hold in-range values and every box lies in the
    /// RGB frame.
    pub fn check_invariants(&self) -> bool {
        let (h, w) = self.dims();
        self.rgb.is_valid()
            && self.tir.is_valid()
            && self
                .boxes
                .iter()
                .all(|b| b.bbox.inside(w as f64, h as f64) && b.bbox.is_well_formed())
    }
}
