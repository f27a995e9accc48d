//! Analytic paired scenes: a smooth textured background, bright objects
//! whose RGB contrast fades with illumination while their thermal contrast
//! does not, single-modality clutter, and an optional RGB-to-TIR affine.
//!
//! Both modalities are rendered from continuous functions, so a misaligned
//! TIR image is the scene evaluated at `T^-1(q)` with no resampling loss.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::LabeledBox;
use crate::error::{Error, Result};
use crate::geometry::{BBox, PlanarTransform};
use crate::image::Image;
use crate::rng::{mix64, Seed, SplitMix64};
use crate::sample::{PairedSample, SampleMeta};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Misalign {
    None,
    /// Rotation about the image center up to `max_rot_deg` in magnitude and
    /// a translation of length up to `max_trans_px`.
    Affine { max_rot_deg: f64, max_trans_px: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// `(height, width)`.
    pub size: (usize, usize),
    /// Inclusive object count range.
    pub object_count: (usize, usize),
    /// Object side length range in pixels.
    pub object_size: (f64, f64),
    /// 1 is daylight, 0 is darkness.
    pub illumination: f64,
    pub thermal_contrast: f64,
    pub misalign: Misalign,
    /// Expected clutter blobs per 10 000 px^2.
    pub clutter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            size: (128, 128),
            object_count: (3, 6),
            object_size: (10.0, 24.0),
            illumination: 1.0,
            thermal_contrast: 0.6,
            misalign: Misalign::None,
            clutter: 2.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::BadConfig(m.to_string()));
        let (h, w) = self.size;
        if h < 16 || w < 16 {
            return bad("size must be at least 16x16");
        }
        if self.object_count.0 > self.object_count.1 {
            return bad("object_count range is empty");
        }
        let (lo, hi) = self.object_size;
        if !(lo >= 2.0 && lo <= hi && hi <= (h.min(w) as f64) / 2.0) {
            return bad("object_size must satisfy 2 <= min <= max <= half the shorter side");
        }
        if !(0.0..=1.0).contains(&self.illumination) {
            return bad("illumination must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.thermal_contrast) {
            return bad("thermal_contrast must be in [0, 1]");
        }
        if !(self.clutter >= 0.0 && self.clutter.is_finite()) {
            return bad("clutter must be a non-negative number");
        }
        if let Misalign::Affine { max_rot_deg, max_trans_px } = self.misalign {
            if !(0.0..=45.0).contains(&max_rot_deg) || !(max_trans_px >= 0.0 && max_trans_px.is_finite()) {
                return bad("misalignment bounds must be rotation in [0, 45] deg and translation >= 0");
            }
        }
        Ok(())
    }

    /// TOML, or JSON when the text starts with `{`.
    pub fn from_str_any(text: &str) -> Result<Self> {
        let cfg: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text)?
        } else {
            toml::from_str(text).map_err(|e| Error::BadConfig(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    Rect,
    Ellipse,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Blob {
    shape: Shape,
    cx: f64,
    cy: f64,
    /// Half extents.
    a: f64,
    b: f64,
    /// Additive RGB color at full illumination.
    color: [f64; 3],
    heat: f64,
}

impl Blob {
    /// Anti-aliased coverage with a one-pixel ramp across the boundary.
    fn coverage(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let sd = match self.shape {
            Shape::Rect => (dx.abs() - self.a).max(dy.abs() - self.b),
            Shape::Ellipse => {
                let r = ((dx / self.a).powi(2) + (dy / self.b).powi(2)).sqrt();
                (r - 1.0) * self.a.min(self.b)
            }
        };
        (0.5 - sd).clamp(0.0, 1.0)
    }

    /// Box in edge coordinates for the pixel centers the blob covers.
    fn bbox(&self) -> BBox {
        BBox::new(self.cx - self.a + 0.5, self.cy - self.b + 0.5, self.cx + self.a + 0.5, self.cy + self.b + 0.5)
    }
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = mix64(seed ^ mix64((ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Value noise in `[0, 1]` on a lattice of spacing `cell`.
fn value_noise(seed: u64, x: f64, y: f64, cell: f64) -> f64 {
    let (gx, gy) = (x / cell, y / cell);
    let (x0, y0) = (gx.floor(), gy.floor());
    let (fx, fy) = (smooth(gx - x0), smooth(gy - y0));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let top = lattice(seed, ix, iy) * (1.0 - fx) + lattice(seed, ix + 1, iy) * fx;
    let bot = lattice(seed, ix, iy + 1) * (1.0 - fx) + lattice(seed, ix + 1, iy + 1) * fx;
    top * (1.0 - fy) + bot * fy
}

const OCTAVES: [(f64, f64); 3] = [(32.0, 0.5), (16.0, 0.3), (8.0, 0.2)];

fn background(seed: u64, x: f64, y: f64) -> f64 {
    OCTAVES
        .iter()
        .enumerate()
        .map(|(k, &(cell, w))| w * value_noise(mix64(seed.wrapping_add(k as u64)), x, y, cell))
        .sum()
}

struct Scene {
    bg_seed: u64,
    tint: [f64; 3],
    objects: Vec<Blob>,
    /// Clutter visible in RGB only.
    rgb_clutter: Vec<Blob>,
    /// Clutter visible in TIR only.
    tir_clutter: Vec<Blob>,
}

impl Scene {
    fn rgb(&self, x: f64, y: f64, c: usize, illum: f64) -> f64 {
        let b = background(self.bg_seed, x, y);
        let mut v = 0.15 + 0.25 * b + self.tint[c];
        for o in self.objects.iter().chain(&self.rgb_clutter) {
            let m = o.coverage(x, y);
            if m > 0.0 {
                v += illum * o.color[c] * m;
            }
        }
        (0.25 + 0.75 * illum) * v
    }

    fn tir(&self, x: f64, y: f64) -> f64 {
        let b = background(self.bg_seed, x, y);
        let mut v = 0.1 + 0.2 * b;
        for o in self.objects.iter().chain(&self.tir_clutter) {
            let m = o.coverage(x, y);
            if m > 0.0 {
                v += o.heat * m;
            }
        }
        v
    }
}

fn draw_blob(rng: &mut SplitMix64, cfg: &SynthConfig, scale: f64) -> Blob {
    let (h, w) = cfg.size;
    let (lo, hi) = cfg.object_size;
    let a = 0.5 * scale * rng.uniform(lo, hi);
    let b = 0.5 * scale * rng.uniform(lo, hi);
    let cx = rng.uniform(a + 1.0, w as f64 - a - 2.0);
    let cy = rng.uniform(b + 1.0, h as f64 - b - 2.0);
    let shape = if rng.bernoulli(0.5) { Shape::Rect } else { Shape::Ellipse };
    let strength = rng.uniform(0.45, 0.6);
    let color = [
        strength * rng.uniform(0.7, 1.0),
        strength * rng.uniform(0.7, 1.0),
        strength * rng.uniform(0.7, 1.0),
    ];
    let heat = cfg.thermal_contrast * rng.uniform(0.85, 1.0);
    Blob {
        shape,
        cx,
        cy,
        a,
        b,
        color,
        heat,
    }
}

fn layout(cfg: &SynthConfig, seed: &Seed) -> Scene {
    let mut rng = seed.rng();
    let (lo, hi) = cfg.object_count;
    let count = lo + rng.below((hi - lo + 1) as u64) as usize;
    let mut objects: Vec<Blob> = Vec::with_capacity(count);
    for _ in 0..count {
        for _ in 0..50 {
            let cand = draw_blob(&mut rng, cfg, 1.0);
            let bb = cand.bbox();
            // Keep objects apart so each is its own connected component.
            let spaced = objects.iter().all(|o| {
                let ob = o.bbox();
                bb.x1 > ob.x2 + 2.0 || ob.x1 > bb.x2 + 2.0 || bb.y1 > ob.y2 + 2.0 || ob.y1 > bb.y2 + 2.0
            });
            if spaced {
                objects.push(cand);
                break;
            }
        }
    }
    let (h, w) = cfg.size;
    let expected = cfg.clutter * (h * w) as f64 / 10_000.0;
    let n_clutter = expected.floor() as usize + usize::from(rng.next_f64() < expected.fract());
    let mut rgb_clutter = Vec::new();
    let mut tir_clutter = Vec::new();
    for _ in 0..n_clutter {
        let mut blob = draw_blob(&mut rng, cfg, 0.6);
        if rng.bernoulli(0.5) {
            blob.heat = 0.0;
            rgb_clutter.push(blob);
        } else {
            blob.color = [0.0; 3];
            blob.heat *= 0.8;
            tir_clutter.push(blob);
        }
    }
    let tint = [rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03)];
    Scene {
        bg_seed: rng.next_u64(),
        tint,
        objects,
        rgb_clutter,
        tir_clutter,
    }
}

fn draw_misalignment(cfg: &SynthConfig, seed: &Seed) -> Result<Option<PlanarTransform>> {
    let Misalign::Affine { max_rot_deg, max_trans_px } = cfg.misalign else {
        return Ok(None);
    };
    let mut rng = seed.rng();
    let theta = rng.uniform(-max_rot_deg, max_rot_deg).to_radians();
    let r = max_trans_px * rng.next_f64().sqrt();
    let phi = rng.uniform(0.0, std::f64::consts::TAU);
    let (h, w) = cfg.size;
    let t = PlanarTransform::similarity_about(
        theta,
        1.0,
        r * phi.cos(),
        r * phi.sin(),
        (w as f64 - 1.0) / 2.0,
        (h as f64 - 1.0) / 2.0,
    )?;
    Ok(Some(t))
}

/// Renders one scene from `seed`. Streams: `derive(0)` layout,
/// `derive(1)` RGB noise, `derive(2)` TIR noise, `derive(3)` misalignment.
pub fn synth_scene_with(cfg: &SynthConfig, seed: &Seed) -> Result<PairedSample> {
    cfg.validate()?;
    let scene = layout(cfg, &seed.derive(0));
    let t = draw_misalignment(cfg, &seed.derive(3))?;
    let inv = t.as_ref().map(|t| t.inverse()).transpose()?;
    let (h, w) = cfg.size;
    let illum = cfg.illumination;
    let sigma_rgb = 0.02 + 0.08 * (1.0 - illum);
    let mut noise = seed.derive(1).rng();
    let mut rgb = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                rgb.push(scene.rgb(x as f64, y as f64, c, illum) + noise.gaussian(0.0, sigma_rgb));
            }
        }
    }
    let mut noise = seed.derive(2).rng();
    let mut tir = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = inv.as_ref().map_or((x as f64, y as f64), |i| i.apply(x as f64, y as f64));
            tir.push(scene.tir(sx, sy) + noise.gaussian(0.0, 0.02));
        }
    }
    let boxes = scene
        .objects
        .iter()
        .map(|o| LabeledBox::new(o.bbox().clip(w as f64, h as f64), 0))
        .collect();
    Ok(PairedSample {
        rgb: Image::from_clamped(h, w, 3, rgb),
        tir: Image::from_clamped(h, w, 1, tir),
        boxes,
        meta: SampleMeta {
            scene_seed: seed.state(),
            injected_transform: t,
            illumination: illum,
        },
    })
}

/// [`synth_scene_with`] under `Seed::new(cfg.seed)`.
pub fn synth_scene(cfg: &SynthConfig) -> Result<PairedSample> {
    synth_scene_with(cfg, &Seed::new(cfg.seed))
}

/// Sample `i` uses `Seed::new(base_seed).derive(i)`; generation runs in
/// parallel and the output is in index order.
pub fn synth_batch(cfg: &SynthConfig, count: usize, base_seed: u64) -> Result<Vec<PairedSample>> {
    let base = Seed::new(base_seed);
    synth_batch_with(cfg, count, &base)
}

pub fn synth_batch_with(cfg: &SynthConfig, count: usize, base: &Seed) -> Result<Vec<PairedSample>> {
    if count == 0 {
        return Err(Error::BadConfig("count must be at least 1".into()));
    }
    (0..count)
        .into_par_iter()
        .map(|i| synth_scene_with(cfg, &base.derive(i as u64)))
        .collect()
}
