//! Non-learned stand-in detector: threshold a smoothed score map and box
//! its 4-connected components.

use serde::{Deserialize, Serialize};

use crate::detection::{Detection, DetectionSet, Modality};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::image::{gaussian_blur, FeatureMap, Image, Raster};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineDetectorConfig {
    /// Projection onto one score channel. Empty means the channel mean.
    pub channel_weights: Vec<f64>,
    pub sigma: f64,
    pub threshold: f64,
    /// Components with fewer pixels are dropped.
    pub min_area: f64,
    pub max_detections: usize,
    pub class_id: u32,
}

impl Default for BaselineDetectorConfig {
    fn default() -> Self {
        Self {
            channel_weights: Vec::new(),
            sigma: 1.0,
            threshold: 0.5,
            min_area: 16.0,
            max_detections: 100,
            class_id: 0,
        }
    }
}

impl BaselineDetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "threshold {} is not in (0, 1)",
                self.threshold
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter("sigma must be finite and >= 0".into()));
        }
        if !(self.min_area >= 0.0) {
            return Err(Error::InvalidParameter("min_area must be >= 0".into()));
        }
        if self.channel_weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParameter("channel weights must be finite".into()));
        }
        Ok(())
    }
}

/// Weighted channel projection, clamped to `[0, 1]`.
pub fn score_map(image: &Image, weights: &[f64]) -> Result<FeatureMap> {
    let c = image.channels();
    let w: Vec<f64> = if weights.is_empty() {
        vec![1.0 / c as f64; c]
    } else if weights.len() == c {
        weights.to_vec()
    } else {
        return Err(Error::ChannelMismatch {
            expected: weights.len(),
            found: c,
        });
    };
    Ok(FeatureMap::from_fn(image.height(), image.width(), 1, |y, x, _| {
        (0..c).map(|k| w[k] * image.at(y, x, k)).sum::<f64>().clamp(0.0, 1.0)
    }))
}

/// 4-connected labelling of `mask` in raster order. Returns the per-pixel
/// label (`usize::MAX` for background) and the label count.
pub fn label_components(mask: &[bool], height: usize, width: usize) -> (Vec<usize>, usize) {
    let mut labels = vec![usize::MAX; mask.len()];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != usize::MAX {
            continue;
        }
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (y, x) = (i / width, i % width);
            let mut visit = |j: usize| {
                if mask[j] && labels[j] == usize::MAX {
                    labels[j] = next;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < width {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - width);
            }
            if y + 1 < height {
                visit(i + width);
            }
        }
        next += 1;
    }
    (labels, next)
}

/// Detects bright regions. A component covering pixel columns `x0..=x1`
/// and rows `y0..=y1` becomes the box `[x0, y0, x1 + 1, y1 + 1]`; its score
/// is the mean smoothed score over the component. Output is sorted by score
/// (ties in raster order of first pixel) and truncated to `max_detections`.
pub fn baseline_detect(image: &Image, cfg: &BaselineDetectorConfig, modality: Modality) -> Result<DetectionSet> {
    cfg.validate()?;
    let raw = score_map(image, &cfg.channel_weights)?;
    let smooth = if cfg.sigma > 0.0 { gaussian_blur(&raw, cfg.sigma) } else { raw };
    let (h, w) = smooth.dims();
    let values = smooth.data();
    let mask: Vec<bool> = values.iter().map(|&v| v > cfg.threshold).collect();
    let (labels, count) = label_components(&mask, h, w);

    struct Acc {
        x0: usize,
        y0: usize,
        x1: usize,
        y1: usize,
        sum: f64,
        n: usize,
    }
    let mut acc: Vec<Acc> = (0..count)
        .map(|_| Acc {
            x0: usize::MAX,
            y0: usize::MAX,
            x1: 0,
            y1: 0,
            sum: 0.0,
            n: 0,
        })
        .collect();
    for (i, &l) in labels.iter().enumerate() {
        if l == usize::MAX {
            continue;
        }
        let (y, x) = (i / w, i % w);
        let a = &mut acc[l];
        a.x0 = a.x0.min(x);
        a.y0 = a.y0.min(y);
        a.x1 = a.x1.max(x);
        a.y1 = a.y1.max(y);
        a.sum += values[i];
        a.n += 1;
    }
    let mut dets: Vec<Detection> = acc
        .iter()
        .filter(|a| a.n as f64 >= cfg.min_area)
        .map(|a| {
            let bbox = BBox::new(a.x0 as f64, a.y0 as f64, (a.x1 + 1) as f64, (a.y1 + 1) as f64);
            Detection::new(bbox, (a.sum / a.n as f64).clamp(0.0, 1.0), cfg.class_id)
        })
        .collect();
    // Stable sort keeps raster order among equal scores.
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    dets.truncate(cfg.max_detections);
    Ok(DetectionSet::new(modality, dets))
}
