//! Dense displacement estimation by coarse-to-fine block matching.
//!
//! `estimate_flow(src, dst)` returns `flow` with `src(x) ~ dst(x + flow(x))`,
//! so content that moved by `(2, 0)` from `src` to `dst` yields `(2, 0)`, and
//! `bilinear_warp(dst, &flow)` brings `dst` back onto the `src` grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{warp_with_flow, FlowField};
use crate::image::{bilinear_sample_clamped, clamp_index, gaussian_blur, resize, FeatureMap, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub levels: usize,
    /// Largest displacement searched, in full-resolution pixels.
    pub max_disp: usize,
    pub patch_radius: usize,
    /// Search radius around the upsampled estimate on finer levels.
    pub refine_radius: usize,
    pub subpixel: bool,
    pub median: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            max_disp: 16,
            patch_radius: 3,
            refine_radius: 2,
            subpixel: true,
            median: true,
        }
    }
}

/// `out(x) = bilinear(src, x + flow(x))`, zero outside the frame.
pub fn bilinear_warp(src: &FeatureMap, flow: &FlowField) -> Result<FeatureMap> {
    warp_with_flow(src, flow)
}

fn downsample(map: &FeatureMap) -> FeatureMap {
    let (h, w) = map.dims();
    resize(&gaussian_blur(map, 1.0), h.div_ceil(2), w.div_ceil(2))
}

fn pyramid(map: &FeatureMap, levels: usize) -> Vec<FeatureMap> {
    let mut out = vec![map.clone()];
    while out.len() < levels {
        let last = out.last().expect("non-empty");
        if last.height() < 8 || last.width() < 8 {
            break;
        }
        out.push(downsample(last));
    }
    out
}

/// Sum of squared differences between the patch of `src` at `(x, y)` and the
/// patch of `dst` at `(x + dx, y + dy)`, borders replicated.
fn ssd(src: &FeatureMap, dst: &FeatureMap, x: usize, y: usize, dx: isize, dy: isize, r: isize) -> f64 {
    let (h, w, ch) = (src.height(), src.width(), src.channels());
    let mut acc = 0.0;
    for oy in -r..=r {
        let sy = clamp_index(y as isize + oy, h);
        let ty = clamp_index(y as isize + oy + dy, h);
        for ox in -r..=r {
            let sx = clamp_index(x as isize + ox, w);
            let tx = clamp_index(x as isize + ox + dx, w);
            for c in 0..ch {
                let d = src.at(sy, sx, c) - dst.at(ty, tx, c);
                acc += d * d;
            }
        }
    }
    acc
}

fn parabola_offset(left: f64, mid: f64, right: f64) -> f64 {
    let denom = left - 2.0 * mid + right;
    if denom <= 0.0 {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
}

/// Integer search around `(px, py)` at every pixel. Ties go to the candidate
/// of smallest total magnitude, then to scan order.
fn search_level(src: &FeatureMap, dst: &FeatureMap, prior: &FlowField, radius: isize, r: isize, subpixel: bool) -> FlowField {
    let (h, w) = src.dims();
    let mut flow = FlowField::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = prior.get(y, x);
            let (px, py) = (px.round() as isize, py.round() as isize);
            let mut best = (f64::INFINITY, isize::MAX, 0isize, 0isize);
            for dy in py - radius..=py + radius {
                for dx in px - radius..=px + radius {
                    let cost = ssd(src, dst, x, y, dx, dy, r);
                    let mag = dx * dx + dy * dy;
                    if cost < best.0 || (cost == best.0 && mag < best.1) {
                        best = (cost, mag, dx, dy);
                    }
                }
            }
            let (cost, _, bx, by) = best;
            let (mut fx, mut fy) = (bx as f64, by as f64);
            if subpixel {
                let c = |dx, dy| ssd(src, dst, x, y, dx, dy, r);
                fx += parabola_offset(c(bx - 1, by), cost, c(bx + 1, by));
                fy += parabola_offset(c(bx, by - 1), cost, c(bx, by + 1));
            }
            flow.set(y, x, (fx, fy));
        }
    }
    flow
}

fn median9(mut v: [f64; 9]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[4]
}

/// Component-wise 3x3 median with replicated borders.
pub fn median_filter(flow: &FlowField) -> FlowField {
    let (h, w) = (flow.height(), flow.width());
    let mut out = FlowField::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let mut ax = [0.0; 9];
            let mut ay = [0.0; 9];
            let mut k = 0;
            for oy in -1..=1isize {
                for ox in -1..=1isize {
                    let (dx, dy) = flow.get(clamp_index(y as isize + oy, h), clamp_index(x as isize + ox, w));
                    ax[k] = dx;
                    ay[k] = dy;
                    k += 1;
                }
            }
            out.set(y, x, (median9(ax), median9(ay)));
        }
    }
    out
}

fn upsample(flow: &FlowField, height: usize, width: usize) -> FlowField {
    let comps = FeatureMap::from_fn(flow.height(), flow.width(), 2, |y, x, c| {
        let (dx, dy) = flow.get(y, x);
        2.0 * if c == 0 { dx } else { dy }
    });
    let up = resize(&comps, height, width);
    let mut out = FlowField::zeros(height, width);
    for y in 0..height {
        for x in 0..width {
            out.set(y, x, (up.at(y, x, 0), up.at(y, x, 1)));
        }
    }
    out
}

pub fn estimate_flow(src: &FeatureMap, dst: &FeatureMap, cfg: &FlowConfig) -> Result<FlowField> {
    if src.dims() != dst.dims() || src.channels() != dst.channels() {
        return Err(Error::ShapeMismatch(format!(
            "flow inputs {}x{}x{} vs {}x{}x{}",
            src.height(),
            src.width(),
            src.channels(),
            dst.height(),
            dst.width(),
            dst.channels()
        )));
    }
    if src.height() == 0 || src.width() == 0 {
        return Err(Error::EmptyImage);
    }
    if cfg.levels == 0 || cfg.patch_radius == 0 {
        return Err(Error::InvalidParameter("flow needs at least one level and a patch".into()));
    }
    let ps = pyramid(src, cfg.levels);
    let pd = pyramid(dst, cfg.levels);
    let top = ps.len() - 1;
    let r = cfg.patch_radius as isize;
    let coarse_radius = (cfg.max_disp as f64 / (1usize << top) as f64).ceil() as isize;
    let mut flow = FlowField::zeros(ps[top].height(), ps[top].width());
    for level in (0..=top).rev() {
        let (s, d) = (&ps[level], &pd[level]);
        if level != top {
            flow = upsample(&flow, s.height(), s.width());
        }
        let radius = if level == top { coarse_radius } else { cfg.refine_radius as isize };
        flow = search_level(s, d, &flow, radius, r, cfg.subpixel && level == 0);
        if cfg.median {
            flow = median_filter(&flow);
        }
    }
    flow.clamp_magnitude(cfg.max_disp as f64 * std::f64::consts::SQRT_2);
    Ok(flow)
}

/// Gradient descent on `sum_c (src(x) - dst(x + flow))^2 + lambda |flow - prior|^2`
/// per pixel with central finite differences. Stops after `steps` (at most
/// 50) or once no pixel moves by more than 1e-4.
pub fn refine_flow(src: &FeatureMap, dst: &FeatureMap, prior: &FlowField, lambda: f64, lr: f64, steps: usize) -> Result<FlowField> {
    if src.dims() != dst.dims() || (prior.height(), prior.width()) != src.dims() {
        return Err(Error::ShapeMismatch("flow refinement inputs differ in size".into()));
    }
    let (h, w, ch) = (src.height(), src.width(), src.channels());
    let eps = 0.25;
    let energy = |x: usize, y: usize, fx: f64, fy: f64, p: (f64, f64)| -> f64 {
        let mut e = 0.0;
        for c in 0..ch {
            let d = src.at(y, x, c) - bilinear_sample_clamped(dst, x as f64 + fx, y as f64 + fy, c);
            e += d * d;
        }
        e + lambda * ((fx - p.0).powi(2) + (fy - p.1).powi(2))
    };
    let mut flow = prior.clone();
    for _ in 0..steps.min(50) {
        let mut moved = 0.0f64;
        let mut next = flow.clone();
        for y in 0..h {
            for x in 0..w {
                let (fx, fy) = flow.get(y, x);
                let p = prior.get(y, x);
                let gx = (energy(x, y, fx + eps, fy, p) - energy(x, y, fx - eps, fy, p)) / (2.0 * eps);
                let gy = (energy(x, y, fx, fy + eps, p) - energy(x, y, fx, fy - eps, p)) / (2.0 * eps);
                let step = ((lr * gx).clamp(-0.25, 0.25), (lr * gy).clamp(-0.25, 0.25));
                moved = moved.max(step.0.abs()).max(step.1.abs());
                next.set(y, x, (fx - step.0, fy - step.1));
            }
        }
        flow = next;
        if moved < 1e-4 {
            break;
        }
    }
    Ok(flow)
}
