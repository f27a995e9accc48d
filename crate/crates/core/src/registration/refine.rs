//! Guided subpixel refinement of a coarse planar transform by block matching
//! normalized cross-correlation on dense feature maps.

use serde::{Deserialize, Serialize};

use super::estimate::{estimate_transform, minimal_sample_size, RobustFitConfig};
use crate::error::{Error, Result};
use crate::geometry::{warp_raster, PlanarTransform, PointMatch, PointMatchSet};
use crate::image::{FeatureMap, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub rounds: usize,
    pub patch_radius: usize,
    /// Search radius of the first round; later rounds use `fine_search`.
    pub search_radius: usize,
    pub fine_search: usize,
    pub spacing: usize,
    pub min_ncc: f64,
    pub inlier_px: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            rounds: 3,
            patch_radius: 7,
            search_radius: 4,
            fine_search: 2,
            spacing: 8,
            min_ncc: 0.8,
            inlier_px: 1.0,
        }
    }
}

struct Patch {
    values: Vec<f64>,
}

impl Patch {
    /// Zero-mean, unit-norm patch; `None` when the patch is flat.
    fn extract(map: &FeatureMap, cx: isize, cy: isize, r: isize) -> Option<Self> {
        let mut values = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
        for y in cy - r..=cy + r {
            for x in cx - r..=cx + r {
                values.push(map.at(y as usize, x as usize, 0));
            }
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        values.iter_mut().for_each(|v| *v -= mean);
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-9 {
            return None;
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Some(Self { values })
    }

    fn ncc(&self, other: &Patch) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}

fn parabola_offset(left: f64, mid: f64, right: f64) -> f64 {
    let denom = left - 2.0 * mid + right;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
}

fn inside(t: &PlanarTransform, x: f64, y: f64, w: usize, h: usize) -> bool {
    let (sx, sy) = t.apply(x, y);
    sx >= 0.0 && sy >= 0.0 && sx <= (w - 1) as f64 && sy <= (h - 1) as f64
}

/// One pass: warps `source` into the target frame with `t`, block-matches a
/// grid of patches against `target` and returns source-to-target matches.
pub fn block_matches(
    source: &FeatureMap,
    target: &FeatureMap,
    t: &PlanarTransform,
    search: usize,
    cfg: &RefineConfig,
) -> Result<PointMatchSet> {
    let (h, w) = target.dims();
    let warped: FeatureMap = warp_raster(&source.channel_mean(), t, h, w)?;
    let target = target.channel_mean();
    let inv = t.inverse()?;
    let r = cfg.patch_radius as isize;
    let s = search as isize;
    let margin = r + s + 1;
    let step = cfg.spacing.max(1);
    let mut pairs = Vec::new();
    let (sh, sw) = source.dims();
    let mut y = margin;
    while y < h as isize - margin {
        let mut x = margin;
        while x < w as isize - margin {
            let corners_inside = [(-r, -r), (r, -r), (-r, r), (r, r)]
                .iter()
                .all(|&(dx, dy)| inside(&inv, (x + dx) as f64, (y + dy) as f64, sw, sh));
            if corners_inside {
                if let Some(m) = match_one(&warped, &target, x, y, r, s, cfg.min_ncc) {
                    let p = inv.apply(x as f64, y as f64);
                    pairs.push(PointMatch {
                        p,
                        q: (x as f64 + m.0, y as f64 + m.1),
                        score: m.2,
                    });
                }
            }
            x += step as isize;
        }
        y += step as isize;
    }
    Ok(PointMatchSet::new(pairs))
}

fn match_one(warped: &FeatureMap, target: &FeatureMap, x: isize, y: isize, r: isize, s: isize, min_ncc: f64) -> Option<(f64, f64, f64)> {
    let template = Patch::extract(warped, x, y, r)?;
    let side = (2 * s + 1) as usize;
    let mut scores = vec![f64::NEG_INFINITY; side * side];
    for dy in -s..=s {
        for dx in -s..=s {
            if let Some(p) = Patch::extract(target, x + dx, y + dy, r) {
                scores[((dy + s) as usize) * side + (dx + s) as usize] = template.ncc(&p);
            }
        }
    }
    let (best, &score) = scores
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))?;
    if score < min_ncc {
        return None;
    }
    let (by, bx) = (best / side, best % side);
    if bx == 0 || by == 0 || bx == side - 1 || by == side - 1 {
        return None;
    }
    let at = |yy: usize, xx: usize| scores[yy * side + xx];
    let fx = parabola_offset(at(by, bx - 1), score, at(by, bx + 1));
    let fy = parabola_offset(at(by - 1, bx), score, at(by + 1, bx));
    if !fx.is_finite() || !fy.is_finite() {
        return None;
    }
    Some((bx as f64 - s as f64 + fx, by as f64 - s as f64 + fy, score))
}

/// Iterates block matching and robust refitting starting from `initial`
/// (a source-to-target map). Rounds that cannot produce a fit keep the
/// previous estimate.
pub fn refine_transform(
    source: &FeatureMap,
    target: &FeatureMap,
    initial: &PlanarTransform,
    cfg: &RefineConfig,
    fit: &RobustFitConfig,
) -> Result<PlanarTransform> {
    if cfg.patch_radius == 0 || cfg.search_radius == 0 || cfg.fine_search == 0 {
        return Err(Error::InvalidParameter("refinement radii must be positive".into()));
    }
    let mut t = *initial;
    let fit = RobustFitConfig {
        inlier_px: cfg.inlier_px,
        ..*fit
    };
    for round in 0..cfg.rounds {
        let search = if round == 0 { cfg.search_radius } else { cfg.fine_search };
        let matches = block_matches(source, target, &t, search, cfg)?;
        if matches.len() < minimal_sample_size(fit.model) {
            break;
        }
        match estimate_transform(&matches, &fit) {
            Ok(r) => t = r.transform,
            Err(_) => break,
        }
    }
    Ok(t)
}
