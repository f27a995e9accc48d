use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "RGB")]
    Rgb,
    #[serde(rename = "TIR")]
    Tir,
    #[serde(rename = "FUSED")]
    Fused,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
    #[serde(rename = "class")]
    pub class_id: u32,
}

impl Detection {
    pub fn new(bbox: BBox, score: f64, class_id: u32) -> Self {
        Self { bbox, score, class_id }
    }
}

/// Scored detections from one modality or a fused pipeline. Serializes as
/// `{"detections":[{"box":[x1,y1,x2,y2],"score":s,"class":c}],"modality":"RGB|TIR|FUSED"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSet {
    pub detections: Vec<Detection>,
    pub modality: Modality,
}

impl DetectionSet {
    pub fn new(modality: Modality, detections: Vec<Detection>) -> Self {
        Self { detections, modality }
    }

    pub fn empty(modality: Modality) -> Self {
        Self::new(modality, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.detections.iter().map(|d| d.score).collect()
    }

    /// Parses and validates one JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let set: DetectionSet = serde_json::from_str(text)?;
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, d) in self.detections.iter().enumerate() {
            if !d.bbox.is_well_formed() {
                return Err(Error::BoxOutOfBounds {
                    index: i,
                    message: format!("malformed box {:?}", d.bbox),
                });
            }
            if !d.score.is_finite() {
                return Err(Error::InvalidParameter(format!("detection {i} has non-finite score")));
            }
        }
        Ok(())
    }
}

/// Ground-truth box with its class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub bbox: BBox,
    pub class_id: u32,
}

impl LabeledBox {
    pub fn new(bbox: BBox, class_id: u32) -> Self {
        Self { bbox, class_id }
    }
}
