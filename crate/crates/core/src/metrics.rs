//! Detection metrics: greedy matching, all-points AP, mAP over IoU
//! thresholds and the log-average miss rate over FPPI.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{Detection, LabeledBox};
use crate::error::{Error, Result};
use crate::geometry::BBox;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub const COCO_THRESHOLDS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];
pub const LAMR_FLOOR: f64 = 1e-4;
pub const LAMR_POINTS: usize = 9;

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

/// Predictions and ground truth for one image.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalImage {
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<LabeledBox>,
}

impl EvalImage {
    pub fn new(detections: Vec<Detection>, ground_truth: Vec<LabeledBox>) -> Self {
        Self {
            detections,
            ground_truth,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    /// Per prediction, in input order.
    pub true_positive: Vec<bool>,
    pub matched_gt: Vec<Option<usize>>,
    pub false_negatives: usize,
}

fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::InvalidParameter(format!("IoU threshold {t} is outside (0, 1]")));
    }
    Ok(())
}

/// Predictions are visited by descending score (stable, so ties keep input
/// order). Each takes the unmatched ground-truth box of its class with the
/// highest IoU (first such box on ties) when that IoU reaches the threshold.
pub fn match_detections(preds: &[Detection], gts: &[LabeledBox], iou_thresh: f64) -> Result<MatchOutcome> {
    check_threshold(iou_thresh)?;
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    let mut taken = vec![false; gts.len()];
    let mut tp = vec![false; preds.len()];
    let mut matched = vec![None; preds.len()];
    for &i in &order {
        let p = &preds[i];
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if taken[j] || g.class_id != p.class_id {
                continue;
            }
            let v = iou(&p.bbox, &g.bbox);
            if v >= iou_thresh && best.map_or(true, |(_, bv)| v > bv) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            taken[j] = true;
            tp[i] = true;
            matched[i] = Some(j);
        }
    }
    Ok(MatchOutcome {
        true_positive: tp,
        matched_gt: matched,
        false_negatives: taken.iter().filter(|t| !**t).count(),
    })
}

/// Scored TP/FP flags pooled over images, ranked by score (ties: image
/// order, then input order), and the number of ground-truth boxes.
fn ranked_hits(images: &[EvalImage], class: Option<u32>, iou_thresh: f64) -> Result<(Vec<(f64, bool)>, usize)> {
    let mut hits = Vec::new();
    let mut n_gt = 0;
    for img in images {
        let preds: Vec<Detection> = img
            .detections
            .iter()
            .filter(|d| class.map_or(true, |c| d.class_id == c))
            .cloned()
            .collect();
        let gts: Vec<LabeledBox> = img
            .ground_truth
            .iter()
            .filter(|g| class.map_or(true, |c| g.class_id == c))
            .cloned()
            .collect();
        n_gt += gts.len();
        let m = match_detections(&preds, &gts, iou_thresh)?;
        hits.extend(preds.iter().zip(m.true_positive).map(|(p, t)| (p.score, t)));
    }
    hits.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok((hits, n_gt))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub ap: f64,
    /// `(recall, precision)` after each ranked prediction.
    pub pr_points: Vec<(f64, f64)>,
    /// Set when there were neither ground truth nor predictions.
    pub vacuous: bool,
}

fn ap_from_hits(hits: &[(f64, bool)], n_gt: usize) -> ApResult {
    if n_gt == 0 {
        return ApResult {
            ap: if hits.is_empty() { 1.0 } else { 0.0 },
            pr_points: Vec::new(),
            vacuous: hits.is_empty(),
        };
    }
    let mut tp = 0usize;
    let mut pr = Vec::with_capacity(hits.len());
    for (k, &(_, hit)) in hits.iter().enumerate() {
        tp += usize::from(hit);
        pr.push((tp as f64 / n_gt as f64, tp as f64 / (k + 1) as f64));
    }
    let mut envelope: Vec<f64> = pr.iter().map(|p| p.1).collect();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (k, &(r, _)) in pr.iter().enumerate() {
        ap += (r - prev_recall) * envelope[k];
        prev_recall = r;
    }
    ApResult {
        ap,
        pr_points: pr,
        vacuous: false,
    }
}

/// All-points interpolated AP pooled over images. Without ground truth the
/// result is 0 when anything was predicted and 1 (flagged vacuous) otherwise.
pub fn average_precision(images: &[EvalImage], class: Option<u32>, iou_thresh: f64) -> Result<ApResult> {
    let (hits, n_gt) = ranked_hits(images, class, iou_thresh)?;
    Ok(ap_from_hits(&hits, n_gt))
}

/// AP on a single image, all classes matched class-aware.
pub fn average_precision_single(preds: &[Detection], gts: &[LabeledBox], iou_thresh: f64) -> Result<f64> {
    Ok(average_precision(&[EvalImage::new(preds.to_vec(), gts.to_vec())], None, iou_thresh)?.ap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VacuousClassPolicy {
    /// A class with neither ground truth nor predictions scores 1.
    #[default]
    CountAsOne,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanAp {
    pub map50: f64,
    /// Mean over the requested thresholds.
    pub map_coco: f64,
    /// Per-class AP at IoU 0.5.
    pub per_class_ap: BTreeMap<u32, f64>,
    pub vacuous_classes: Vec<u32>,
}

fn classes_of(images: &[EvalImage]) -> BTreeSet<u32> {
    images
        .iter()
        .flat_map(|i| {
            i.detections
                .iter()
                .map(|d| d.class_id)
                .chain(i.ground_truth.iter().map(|g| g.class_id))
        })
        .collect()
}

fn class_mean(images: &[EvalImage], classes: &[u32], t: f64, policy: VacuousClassPolicy) -> Result<(f64, Vec<(u32, ApResult)>)> {
    let per: Vec<(u32, ApResult)> = classes
        .par_iter()
        .map(|&c| average_precision(images, Some(c), t).map(|r| (c, r)))
        .collect::<Result<_>>()?;
    let counted: Vec<f64> = per
        .iter()
        .filter(|(_, r)| !(r.vacuous && policy == VacuousClassPolicy::Skip))
        .map(|(_, r)| r.ap)
        .collect();
    let mean = if counted.is_empty() {
        1.0
    } else {
        counted.iter().sum::<f64>() / counted.len() as f64
    };
    Ok((mean, per))
}

/// Class-mean AP at 0.5 and averaged over `thresholds`. The class set is
/// every class that occurs in predictions or ground truth; with no classes
/// at all both means are 1.
pub fn mean_ap(images: &[EvalImage], thresholds: &[f64], policy: VacuousClassPolicy) -> Result<MeanAp> {
    if thresholds.is_empty() {
        return Err(Error::InvalidParameter("no IoU thresholds".into()));
    }
    let classes: Vec<u32> = classes_of(images).into_iter().collect();
    let (map50, per) = class_mean(images, &classes, 0.5, policy)?;
    let mut total = 0.0;
    for &t in thresholds {
        total += if t == 0.5 { map50 } else { class_mean(images, &classes, t, policy)?.0 };
    }
    Ok(MeanAp {
        map50,
        map_coco: total / thresholds.len() as f64,
        vacuous_classes: per.iter().filter(|(_, r)| r.vacuous).map(|(c, _)| *c).collect(),
        per_class_ap: per.into_iter().map(|(c, r)| (c, r.ap)).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissRateCurve {
    pub lamr: f64,
    /// `(fppi, miss_rate)` starting at the empty operating point.
    pub points: Vec<(f64, f64)>,
}

/// `LAMR_POINTS` log-spaced FPPI references in `[1e-2, 1]`.
pub fn fppi_references() -> Vec<f64> {
    (0..LAMR_POINTS)
        .map(|i| 10f64.powf(-2.0 + 2.0 * i as f64 / (LAMR_POINTS - 1) as f64))
        .collect()
}

/// Sweeps the score threshold at IoU 0.5. Each reference FPPI takes the miss
/// rate of the last operating point whose FPPI does not exceed it; values
/// are floored at `LAMR_FLOOR` and combined by geometric mean. Without
/// ground truth the miss rate is taken as zero.
pub fn log_average_miss_rate(images: &[EvalImage], image_count: usize) -> Result<MissRateCurve> {
    if image_count == 0 {
        return Err(Error::InvalidParameter("image_count must be at least 1".into()));
    }
    let (hits, n_gt) = ranked_hits(images, None, 0.5)?;
    let miss = |tp: usize| if n_gt == 0 { 0.0 } else { 1.0 - tp as f64 / n_gt as f64 };
    let mut points = vec![(0.0, miss(0))];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < hits.len() {
        // Equal scores enter together: a threshold cannot split them.
        let s = hits[k].0;
        while k < hits.len() && hits[k].0 == s {
            if hits[k].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push((fp as f64 / image_count as f64, miss(tp)));
    }
    let logs: f64 = fppi_references()
        .iter()
        .map(|&r| {
            let mr = points
                .iter()
                .rev()
                .find(|p| p.0 <= r)
                .map_or(1.0, |p| p.1);
            mr.max(LAMR_FLOOR).ln()
        })
        .sum();
    Ok(MissRateCurve {
        lamr: (logs / LAMR_POINTS as f64).exp(),
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub per_class_ap: BTreeMap<u32, f64>,
    pub map50: f64,
    pub map_coco: f64,
    pub lamr: f64,
    pub pr_points: Vec<(f64, f64)>,
    pub fppi_mr_points: Vec<(f64, f64)>,
    pub vacuous_classes: Vec<u32>,
}

/// Full evaluation; the PR curve pools all classes at IoU 0.5.
pub fn evaluate(images: &[EvalImage], policy: VacuousClassPolicy) -> Result<EvalResult> {
    let m = mean_ap(images, &COCO_THRESHOLDS, policy)?;
    let pr = average_precision(images, None, 0.5)?;
    let mr = log_average_miss_rate(images, images.len().max(1))?;
    Ok(EvalResult {
        per_class_ap: m.per_class_ap,
        map50: m.map50,
        map_coco: m.map_coco,
        lamr: mr.lamr,
        pr_points: pr.pr_points,
        fppi_mr_points: mr.points,
        vacuous_classes: m.vacuous_classes,
    })
}

pub fn pr_csv(result: &EvalResult) -> String {
    let mut s = String::from("recall,precision\n");
    for (r, p) in &result.pr_points {
        let _ = writeln!(s, "{r},{p}");
    }
    s
}

pub fn fppi_mr_csv(result: &EvalResult) -> String {
    let mut s = String::from("fppi,miss_rate\n");
    for (f, m) in &result.fppi_mr_points {
        let _ = writeln!(s, "{f},{m}");
    }
    s
}
