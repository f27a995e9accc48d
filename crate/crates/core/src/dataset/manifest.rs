//! JSON Lines manifests of paired images with ground-truth boxes.
//!
//! One record per line:
//! `{"rgb": "a.png", "tir": "a_t.png", "boxes": [[x1, y1, x2, y2, class], ...]}`.
//! Paths are relative to the manifest's directory. Blank lines are ignored.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::LabeledBox;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::io::{read_image, write_image};
use crate::sample::PairedSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    rgb: String,
    tir: String,
    #[serde(default)]
    boxes: Vec<[f64; 5]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    /// 1-based line number in the manifest.
    pub line: usize,
    pub rgb: PathBuf,
    pub tir: PathBuf,
    pub boxes: Vec<LabeledBox>,
}

/// What to do with a box that leaves the image frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutOfBoundsPolicy {
    /// Log a warning and clip; boxes clipped to nothing are dropped.
    #[default]
    Clip,
    Error,
}

fn parse_box(v: &[f64; 5], line: usize) -> Result<LabeledBox> {
    let [x1, y1, x2, y2, class] = *v;
    let err = |message: String| Error::Parse { line, message };
    if !v.iter().all(|c| c.is_finite()) {
        return Err(err("box has a non-finite coordinate".into()));
    }
    if x1 > x2 || y1 > y2 {
        return Err(err(format!("box [{x1}, {y1}, {x2}, {y2}] has inverted corners")));
    }
    if class < 0.0 || class.fract() != 0.0 || class > u32::MAX as f64 {
        return Err(err(format!("class {class} is not a non-negative integer")));
    }
    Ok(LabeledBox::new(BBox::new(x1, y1, x2, y2), class as u32))
}

/// Parses manifest text; relative paths are joined onto `base_dir`.
pub fn parse_manifest_str(text: &str, base_dir: &Path) -> Result<Vec<ManifestRecord>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(raw).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let boxes = rec.boxes.iter().map(|b| parse_box(b, line)).collect::<Result<Vec<_>>>()?;
        out.push(ManifestRecord {
            line,
            rgb: base_dir.join(rec.rgb),
            tir: base_dir.join(rec.tir),
            boxes,
        });
    }
    Ok(out)
}

fn load_record(rec: &ManifestRecord, policy: OutOfBoundsPolicy) -> Result<PairedSample> {
    let rgb = read_image(&rec.rgb)?;
    let tir = read_image(&rec.tir)?;
    let mut sample = PairedSample::new(rgb, tir, Vec::new())?;
    let (h, w) = sample.dims();
    for (index, b) in rec.boxes.iter().enumerate() {
        if b.bbox.inside(w as f64, h as f64) {
            sample.boxes.push(*b);
            continue;
        }
        match policy {
            OutOfBoundsPolicy::Error => {
                return Err(Error::BoxOutOfBounds {
                    index,
                    message: format!("line {}: box outside the {w}x{h} frame", rec.line),
                })
            }
            OutOfBoundsPolicy::Clip => {
                log::warn!("manifest line {}: clipping box {index} to the {w}x{h} frame", rec.line);
                let c = b.bbox.clip(w as f64, h as f64);
                if c.area() > 0.0 {
                    sample.boxes.push(LabeledBox::new(c, b.class_id));
                }
            }
        }
    }
    Ok(sample)
}

/// Reads every record of a manifest file. Records load in parallel; the
/// output keeps file order.
pub fn load_manifest(path: &Path, policy: OutOfBoundsPolicy) -> Result<Vec<PairedSample>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let records = parse_manifest_str(&text, base)?;
    records.par_iter().map(|r| load_record(r, policy)).collect()
}

/// Writes `rgb_NNNNN.png`, `tir_NNNNN.png` and `manifest.jsonl` into `dir`
/// and returns the manifest path.
pub fn write_dataset(samples: &[PairedSample], dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut lines = String::new();
    for (i, s) in samples.iter().enumerate() {
        let rgb = format!("rgb_{i:05}.png");
        let tir = format!("tir_{i:05}.png");
        write_image(&dir.join(&rgb), &s.rgb)?;
        write_image(&dir.join(&tir), &s.tir)?;
        let rec = RawRecord {
            rgb,
            tir,
            boxes: s
                .boxes
                .iter()
                .map(|b| [b.bbox.x1, b.bbox.y1, b.bbox.x2, b.bbox.y2, b.class_id as f64])
                .collect(),
        };
        lines.push_str(&serde_json::to_string(&rec)?);
        lines.push('\n');
    }
    let path = dir.join("manifest.jsonl");
    std::fs::write(&path, lines)?;
    Ok(path)
}
