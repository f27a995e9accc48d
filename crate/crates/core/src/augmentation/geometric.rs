//! Composite affine augmentation applied identically to both modalities.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::detection::LabeledBox;
use crate::error::{Error, Result};
use crate::geometry::{warp_raster, PlanarTransform, TransformKind};
use crate::image::{gaussian_blur, FeatureMap, Image, Raster};
use crate::rng::Seed;
use crate::sample::PairedSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MirrorKind {
    Horizontal,
    Vertical,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometricParams {
    pub c_x: f64,
    pub c_y: f64,
    pub theta: f64,
    /// `None` leaves the mirror factor at the identity.
    pub mirror: Option<MirrorKind>,
    pub phi_h: f64,
    pub phi_v: f64,
    pub t_x: f64,
    pub t_y: f64,
    /// Peak magnitude of the smooth intensity offset field; 0 disables it.
    pub upsilon_amplitude: f64,
}

impl Default for GeometricParams {
    fn default() -> Self {
        Self {
            c_x: 1.0,
            c_y: 1.0,
            theta: 0.0,
            mirror: None,
            phi_h: 0.0,
            phi_v: 0.0,
            t_x: 0.0,
            t_y: 0.0,
            upsilon_amplitude: 0.0,
        }
    }
}

/// Sampling ranges for random geometric parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometricRanges {
    pub scale: (f64, f64),
    /// Maximum absolute rotation in degrees.
    pub rotation_deg: f64,
    pub flip_probability: f64,
    /// Maximum absolute translation as a fraction of the frame size.
    pub translate_fraction: f64,
    pub upsilon_amplitude: f64,
}

impl Default for GeometricRanges {
    fn default() -> Self {
        Self {
            scale: (0.9, 1.1),
            rotation_deg: 10.0,
            flip_probability: 0.5,
            translate_fraction: 0.05,
            upsilon_amplitude: 0.0,
        }
    }
}

impl GeometricParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_x > 0.0 && self.c_y > 0.0) {
            return Err(Error::DegenerateScale {
                c_x: self.c_x,
                c_y: self.c_y,
            });
        }
        if !(0.0..=0.05).contains(&self.upsilon_amplitude) {
            return Err(Error::InvalidParameter("upsilon_amplitude must be in [0, 0.05]".into()));
        }
        Ok(())
    }

    /// Draws scale, rotation, horizontal flip and translation in that order.
    pub fn sample(ranges: &GeometricRanges, width: usize, height: usize, seed: &Seed) -> Self {
        let mut rng = seed.rng();
        let (lo, hi) = ranges.scale;
        let c = if hi > lo { rng.uniform(lo, hi) } else { lo };
        let theta = rng.uniform(-1.0, 1.0) * ranges.rotation_deg.to_radians();
        let flip = rng.bernoulli(ranges.flip_probability);
        let t_x = rng.uniform(-1.0, 1.0) * ranges.translate_fraction * width as f64;
        let t_y = rng.uniform(-1.0, 1.0) * ranges.translate_fraction * height as f64;
        Self {
            c_x: c,
            c_y: c,
            theta,
            mirror: flip.then_some(MirrorKind::Horizontal),
            t_x,
            t_y,
            upsilon_amplitude: ranges.upsilon_amplitude,
            ..Self::default()
        }
    }
}

/// 2x2 mirror factor. `Both` is the combined diagonal
/// `diag(cos phi_h cos phi_v, cos phi_h cos phi_v)`.
pub fn mirror_matrix(kind: MirrorKind, phi_h: f64, phi_v: f64) -> [[f64; 2]; 2] {
    match kind {
        MirrorKind::Horizontal => [[-phi_h.cos(), 0.0], [0.0, phi_h.cos()]],
        MirrorKind::Vertical => [[phi_v.cos(), 0.0], [0.0, -phi_v.cos()]],
        MirrorKind::Both => {
            let v = phi_h.cos() * phi_v.cos();
            [[v, 0.0], [0.0, v]]
        }
    }
}

fn lift(m: [[f64; 2]; 2]) -> Matrix3<f64> {
    Matrix3::new(m[0][0], m[0][1], 0.0, m[1][0], m[1][1], 0.0, 0.0, 0.0, 1.0)
}

fn translate(tx: f64, ty: f64) -> Matrix3<f64> {
    Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0)
}

/// The composite matrix `S R U E` (all lifted to homogeneous 3x3), acting on
/// coordinates relative to the frame center.
pub fn composite_matrix(g: &GeometricParams) -> Result<Matrix3<f64>> {
    g.validate()?;
    let s = lift([[g.c_x, 0.0], [0.0, g.c_y]]);
    let (sin, cos) = g.theta.sin_cos();
    let r = lift([[cos, -sin], [sin, cos]]);
    let u = match g.mirror {
        Some(kind) => lift(mirror_matrix(kind, g.phi_h, g.phi_v)),
        None => Matrix3::identity(),
    };
    let e = translate(g.t_x, g.t_y);
    Ok(s * r * u * e)
}

/// Pixel-frame transform for a `width x height` image: the composite matrix
/// applied about the center `((W - 1) / 2, (H - 1) / 2)`.
pub fn compose_affine(g: &GeometricParams, width: usize, height: usize) -> Result<PlanarTransform> {
    let rho = composite_matrix(g)?;
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let m = translate(cx, cy) * rho * translate(-cx, -cy);
    PlanarTransform::from_matrix(TransformKind::Affine, m)
}

/// Gaussian-blurred noise rescaled to peak magnitude `amplitude`.
pub fn smooth_offset_field(height: usize, width: usize, amplitude: f64, seed: &Seed) -> FeatureMap {
    if amplitude <= 0.0 {
        return FeatureMap::zeros(height, width, 1);
    }
    let mut rng = seed.rng();
    let noise = FeatureMap::from_fn(height, width, 1, |_, _, _| rng.normal());
    let sigma = (height.min(width) as f64 / 8.0).max(1.0);
    let smooth = gaussian_blur(&noise, sigma);
    let peak = smooth.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return smooth;
    }
    smooth.map(|v| v * amplitude / peak)
}

fn add_offset(img: Image, offset: &FeatureMap) -> Image {
    let ch = img.channels();
    let (h, w) = img.dims();
    let mut data = img.into_data();
    for (i, v) in data.iter_mut().enumerate() {
        *v += offset.data()[i / ch];
    }
    Image::from_clamped(h, w, ch, data)
}

/// Warps boxes by `t`: hull of the warped corners, clipped to the frame,
/// dropped below 1 px^2.
pub fn warp_boxes(boxes: &[LabeledBox], t: &PlanarTransform, width: usize, height: usize) -> Vec<LabeledBox> {
    boxes
        .iter()
        .filter_map(|b| {
            let nb = b.bbox.transformed(t).clip(width as f64, height as f64);
            (nb.area() >= 1.0).then_some(LabeledBox::new(nb, b.class_id))
        })
        .collect()
}

/// Warps both images with the same transform, adds the optional offset
/// field, and remaps the boxes.
pub fn warp_pair(sample: &PairedSample, t: &PlanarTransform, offset: Option<&FeatureMap>) -> Result<PairedSample> {
    let (h, w) = sample.dims();
    if sample.tir.dims() != (h, w) {
        return Err(Error::ShapeMismatch("geometric augmentation needs a registered pair".into()));
    }
    t.inverse()?;
    let mut rgb: Image = warp_raster(&sample.rgb, t, h, w)?;
    let mut tir: Image = warp_raster(&sample.tir, t, h, w)?;
    if let Some(off) = offset {
        if off.dims() != (h, w) || off.channels() != 1 {
            return Err(Error::ShapeMismatch("offset field must be H x W x 1".into()));
        }
        rgb = add_offset(rgb, off);
        tir = add_offset(tir, off);
    }
    Ok(PairedSample {
        rgb,
        tir,
        boxes: warp_boxes(&sample.boxes, t, w, h),
        meta: sample.meta.clone(),
    })
}

/// Builds the transform from `g`, warps the pair, and returns the transform
/// so callers can check that both modalities shared it.
pub fn augment_geometric(
    sample: &PairedSample,
    g: &GeometricParams,
    seed: &Seed,
) -> Result<(PairedSample, PlanarTransform)> {
    let (h, w) = sample.dims();
    let t = compose_affine(g, w, h)?;
    let offset = (g.upsilon_amplitude > 0.0).then(|| smooth_offset_field(h, w, g.upsilon_amplitude, seed));
    Ok((warp_pair(sample, &t, offset.as_ref())?, t))
}
