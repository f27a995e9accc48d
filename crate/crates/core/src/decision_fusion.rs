//! Decision-level fusion of per-modality detection sets.
//!
//! Detections are paired across modalities by IoU (greedily, in descending
//! RGB score order) and each pair is merged into one box. Single-modality
//! boxes survive with a configurable penalty. Every fused result passes
//! through class-wise NMS.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::detection::{Detection, DetectionSet, Modality};
use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalMode {
    SimpleAverage,
    #[default]
    ConfidenceWeighted,
    MaxSelection,
}

impl FromStr for LocalMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "simple_average" | "SimpleAverage" => Ok(LocalMode::SimpleAverage),
            "confidence_weighted" | "ConfidenceWeighted" => Ok(LocalMode::ConfidenceWeighted),
            "max_selection" | "MaxSelection" => Ok(LocalMode::MaxSelection),
            other => Err(Error::UnknownMode(other.to_string())),
        }
    }
}

impl fmt::Display for LocalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LocalMode::SimpleAverage => "simple_average",
            LocalMode::ConfidenceWeighted => "confidence_weighted",
            LocalMode::MaxSelection => "max_selection",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionPolicy {
    pub epsilon: f64,
    pub local_mode: LocalMode,
    pub kappa_rgb: f64,
    pub kappa_tir: f64,
    /// Region coefficients for [`global_fuse`]; `None` means uniform `1/N`.
    pub theta: Option<Vec<f64>>,
    pub iou_match: f64,
    pub unmatched_penalty: f64,
    pub nms_iou: f64,
    /// [`global_fuse`] drops detections whose score is not above this.
    pub score_floor: f64,
}

impl Default for FusionPolicy {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            local_mode: LocalMode::ConfidenceWeighted,
            kappa_rgb: 1.0,
            kappa_tir: 1.0,
            theta: None,
            iou_match: 0.5,
            unmatched_penalty: 1.0,
            nms_iou: 0.5,
            score_floor: 0.0,
        }
    }
}

impl FusionPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter("epsilon must be > 0".into()));
        }
        if !(self.iou_match > 0.0 && self.iou_match <= 1.0) {
            return Err(Error::InvalidParameter("iou_match must be in (0, 1]".into()));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(Error::InvalidParameter("nms_iou must be in (0, 1]".into()));
        }
        for (name, v) in [
            ("kappa_rgb", self.kappa_rgb),
            ("kappa_tir", self.kappa_tir),
            ("unmatched_penalty", self.unmatched_penalty),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Min-max normalized scores. A constant set (including a single
/// detection) maps to all ones.
pub fn confidence_scores(set: &DetectionSet) -> Vec<f64> {
    let scores = set.scores();
    let Some(lo) = scores.iter().copied().reduce(f64::min) else {
        return Vec::new();
    };
    let hi = scores.iter().copied().fold(lo, f64::max);
    if hi - lo <= 0.0 {
        return vec![1.0; scores.len()];
    }
    scores.iter().map(|s| (s - lo) / (hi - lo)).collect()
}

/// Score of a confidence-weighted pair. Falls back to the plain mean when
/// both confidences are (near) zero.
pub fn weighted_pair_score(c_r: f64, s_r: f64, c_t: f64, s_t: f64, epsilon: f64) -> f64 {
    if c_r + c_t < epsilon {
        return 0.5 * (s_r + s_t);
    }
    (c_r * s_r + c_t * s_t + epsilon) / (c_r + c_t + epsilon)
}

fn weighted_box(a: &BBox, wa: f64, b: &BBox, wb: f64) -> BBox {
    // Interpolating from `a` keeps identical boxes bit-exact.
    let t = if wa + wb > 0.0 { wb / (wa + wb) } else { 0.5 };
    let lerp = |u: f64, v: f64| u + t * (v - u);
    BBox::new(lerp(a.x1, b.x1), lerp(a.y1, b.y1), lerp(a.x2, b.x2), lerp(a.y2, b.y2))
}

/// Greedy cross-modality pairing. RGB detections are visited by descending
/// score (input order on ties); each takes the unused same-class TIR
/// detection of highest IoU, if that IoU reaches `iou_match`.
/// Returns `(rgb_index, tir_index)` pairs in visiting order.
pub fn pair_detections(rgb: &DetectionSet, tir: &DetectionSet, iou_match: f64) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..rgb.len()).collect();
    order.sort_by(|&a, &b| {
        rgb.detections[b]
            .score
            .partial_cmp(&rgb.detections[a].score)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut used = vec![false; tir.len()];
    let mut pairs = Vec::new();
    for i in order {
        let r = &rgb.detections[i];
        let mut best: Option<(usize, f64)> = None;
        for (j, t) in tir.detections.iter().enumerate() {
            if used[j] || t.class_id != r.class_id {
                continue;
            }
            let iou = r.bbox.iou(&t.bbox);
            if iou >= iou_match && best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        if let Some((j, _)) = best {
            used[j] = true;
            pairs.push((i, j));
        }
    }
    pairs
}

fn scaled(set: &DetectionSet, kappa: f64) -> DetectionSet {
    DetectionSet::new(
        set.modality,
        set.detections
            .iter()
            .map(|d| Detection::new(d.bbox, (d.score * kappa).clamp(0.0, 1.0), d.class_id))
            .collect(),
    )
}

fn fuse_with(rgb: &DetectionSet, tir: &DetectionSet, mode: LocalMode, policy: &FusionPolicy) -> DetectionSet {
    let c_r = confidence_scores(rgb);
    let c_t = confidence_scores(tir);
    let pairs = pair_detections(rgb, tir, policy.iou_match);
    let mut matched_r = vec![false; rgb.len()];
    let mut matched_t = vec![false; tir.len()];
    let mut out = Vec::with_capacity(rgb.len() + tir.len());
    for &(i, j) in &pairs {
        matched_r[i] = true;
        matched_t[j] = true;
        let (r, t) = (&rgb.detections[i], &tir.detections[j]);
        let (score, bbox) = match mode {
            LocalMode::SimpleAverage => (0.5 * (r.score + t.score), weighted_box(&r.bbox, 1.0, &t.bbox, 1.0)),
            LocalMode::ConfidenceWeighted => {
                let score = weighted_pair_score(c_r[i], r.score, c_t[j], t.score, policy.epsilon);
                let bbox = if c_r[i] + c_t[j] < policy.epsilon {
                    weighted_box(&r.bbox, 1.0, &t.bbox, 1.0)
                } else {
                    weighted_box(&r.bbox, c_r[i], &t.bbox, c_t[j])
                };
                (score, bbox)
            }
            LocalMode::MaxSelection => {
                if r.score >= t.score {
                    (r.score, r.bbox)
                } else {
                    (t.score, t.bbox)
                }
            }
        };
        out.push(Detection::new(bbox, score.clamp(0.0, 1.0), r.class_id));
    }
    let leftovers = rgb
        .detections
        .iter()
        .zip(&matched_r)
        .chain(tir.detections.iter().zip(&matched_t))
        .filter(|(_, &m)| !m);
    for (d, _) in leftovers {
        out.push(Detection::new(
            d.bbox,
            (d.score * policy.unmatched_penalty).clamp(0.0, 1.0),
            d.class_id,
        ));
    }
    nms(&DetectionSet::new(Modality::Fused, out), policy.nms_iou)
}

/// Pairwise confidence-weighted fusion with min-max confidences.
pub fn confidence_weighted_fuse(rgb: &DetectionSet, tir: &DetectionSet, policy: &FusionPolicy) -> Result<DetectionSet> {
    policy.validate()?;
    Ok(fuse_with(rgb, tir, LocalMode::ConfidenceWeighted, policy))
}

/// Scales each modality by its gain (clamped to `[0, 1]`), then fuses pairs
/// with the policy's local mode. `MaxSelection` prefers RGB on ties.
pub fn local_fuse(rgb: &DetectionSet, tir: &DetectionSet, policy: &FusionPolicy) -> Result<DetectionSet> {
    policy.validate()?;
    let rgb = scaled(rgb, policy.kappa_rgb);
    let tir = scaled(tir, policy.kappa_tir);
    Ok(fuse_with(&rgb, &tir, policy.local_mode, policy))
}

/// Scales region `i` by `theta_i * N`, concatenates, drops scores at or
/// below the floor and runs NMS.
pub fn global_fuse(locals: &[DetectionSet], policy: &FusionPolicy) -> Result<DetectionSet> {
    policy.validate()?;
    let n = locals.len();
    if n == 0 {
        return Err(Error::EmptyInput("global fusion needs at least one region".into()));
    }
    let theta = match &policy.theta {
        Some(t) if t.len() != n => {
            return Err(Error::InvalidParameter(format!(
                "{} region coefficients for {n} regions",
                t.len()
            )))
        }
        Some(t) => t.clone(),
        None => vec![1.0 / n as f64; n],
    };
    let mut all = Vec::new();
    for (set, &th) in locals.iter().zip(&theta) {
        let gain = th * n as f64;
        for d in &set.detections {
            let score = (d.score * gain).clamp(0.0, 1.0);
            if score > policy.score_floor {
                all.push(Detection::new(d.bbox, score, d.class_id));
            }
        }
    }
    Ok(nms(&DetectionSet::new(Modality::Fused, all), policy.nms_iou))
}

/// Sort key order used by [`nms`]: score descending, then smaller area,
/// then input position.
fn nms_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (&dets[a], &dets[b]);
        db.score
            .partial_cmp(&da.score)
            .unwrap_or(Ordering::Equal)
            .then(da.bbox.area().partial_cmp(&db.bbox.area()).unwrap_or(Ordering::Equal))
            .then(a.cmp(&b))
    });
    order
}

/// Greedy class-wise non-maximum suppression. A detection is suppressed
/// when its IoU with an already kept box of the same class exceeds
/// `iou_threshold`. The output is in keep order and keeps the input modality.
pub fn nms(set: &DetectionSet, iou_threshold: f64) -> DetectionSet {
    let dets = &set.detections;
    let mut kept: Vec<Detection> = Vec::new();
    for i in nms_order(dets) {
        let d = &dets[i];
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == d.class_id && k.bbox.iou(&d.bbox) > iou_threshold);
        if !suppressed {
            kept.push(*d);
        }
    }
    DetectionSet::new(set.modality, kept)
}
