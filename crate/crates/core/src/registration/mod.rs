//! Cross-modal registration: sparse matching with a robust planar fit, or a
//! dense displacement field, followed by warping one modality onto the other.

pub mod depth;
pub mod descriptors;
pub mod estimate;
pub mod flow;
pub mod losses;
pub mod matching;
pub mod refine;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use depth::{complete_depth, depth_guided_attention};
pub use descriptors::{extract_descriptors, extract_descriptors_with, gradient_magnitude, DescriptorConfig, DescriptorGrid};
pub use estimate::{estimate_transform, fit_affine_lsq, fit_homography_dlt, RobustFit, RobustFitConfig};
pub use flow::{bilinear_warp, estimate_flow, refine_flow, FlowConfig};
pub use losses::{loftr_joint_loss, superfusion_joint_loss, LossWeights};
pub use matching::{match_descriptors, match_features, match_probabilities, softmax, DescriptorMatch, MatchConfig};
pub use refine::{block_matches, refine_transform, RefineConfig};

use crate::error::{Error, Result};
use crate::geometry::{warp_raster, warp_with_flow, BBox, FlowField, PlanarTransform};
use crate::image::{FeatureMap, Image, Raster};
use crate::sample::PairedSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegistrationMethod {
    LoftrStyle,
    SuperfusionStyle,
}

impl fmt::Display for RegistrationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegistrationMethod::LoftrStyle => "loftr_style",
            RegistrationMethod::SuperfusionStyle => "superfusion_style",
        })
    }
}

impl FromStr for RegistrationMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "loftr_style" => Ok(RegistrationMethod::LoftrStyle),
            "superfusion_style" => Ok(RegistrationMethod::SuperfusionStyle),
            other => Err(Error::UnknownMode(other.to_string())),
        }
    }
}

/// Frame that stays fixed; the other modality is warped onto it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Reference {
    #[default]
    #[serde(rename = "RGB", alias = "rgb")]
    Rgb,
    #[serde(rename = "TIR", alias = "tir")]
    Tir,
}

impl FromStr for Reference {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rgb" => Ok(Reference::Rgb),
            "tir" => Ok(Reference::Tir),
            other => Err(Error::UnknownMode(other.to_string())),
        }
    }
}

impl fmt::Display for Reference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reference::Rgb => "RGB",
            Reference::Tir => "TIR",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    pub descriptor: DescriptorConfig,
    /// Grid spacing of the TIR-side descriptors; a dense grid keeps match
    /// positions close to the true correspondences.
    pub dense_stride: usize,
    /// Blur applied before the gradient-magnitude maps used for refinement.
    pub structure_smoothing: f64,
    pub matching: MatchConfig,
    pub fit: RobustFitConfig,
    pub refine: RefineConfig,
    pub flow: FlowConfig,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            descriptor: DescriptorConfig::default(),
            dense_stride: 2,
            structure_smoothing: 1.0,
            matching: MatchConfig::default(),
            fit: RobustFitConfig::default(),
            refine: RefineConfig::default(),
            flow: FlowConfig::default(),
        }
    }
}

/// How the moving modality was brought onto the reference frame.
#[derive(Debug, Clone, PartialEq)]
pub enum Alignment {
    /// RGB-to-TIR planar map.
    Transform(PlanarTransform),
    /// Displacement on the reference grid into the moving image.
    Flow(FlowField),
}

/// `out(p) = bilinear(image, t^-1(p))` on the same grid, zero outside.
pub fn apply_transform(image: &Image, t: &PlanarTransform) -> Result<Image> {
    let (h, w) = image.dims();
    warp_raster(image, t, h, w)
}

fn textureless(g: &DescriptorGrid) -> bool {
    g.valid_count() < estimate::minimal_sample_size(crate::geometry::TransformKind::Affine)
}

/// Gradient magnitude divided by its mean, a contrast-free dense feature
/// shared by both modalities.
pub fn structure_map(image: &Image, smoothing: f64) -> FeatureMap {
    let gm = gradient_magnitude(image, smoothing);
    let mean = gm.data().iter().sum::<f64>() / gm.data().len().max(1) as f64;
    if mean > 0.0 {
        gm.map(|v| v / mean)
    } else {
        gm
    }
}

/// Estimates the map from RGB pixel coordinates to TIR pixel coordinates:
/// descriptor matching and RANSAC give a coarse fit that is then refined by
/// block matching on structure maps.
pub fn estimate_rgb_to_tir(rgb: &Image, tir: &Image, cfg: &RegistrationConfig) -> Result<RobustFit> {
    let ga = extract_descriptors_with(rgb, &cfg.descriptor)?;
    let dense = DescriptorConfig {
        stride: cfg.dense_stride,
        ..cfg.descriptor
    };
    let gb = extract_descriptors_with(tir, &dense)?;
    if textureless(&ga) || textureless(&gb) {
        return Err(Error::RegistrationFailed("no texture to match".into()));
    }
    let matches = match_features(&ga, &gb, &cfg.matching)?;
    let coarse = estimate_transform(
        &matches,
        &RobustFitConfig {
            inlier_px: cfg.fit.inlier_px.max(cfg.descriptor.cell_size as f64 / 2.0),
            ..cfg.fit
        },
    )
    .map_err(|e| Error::RegistrationFailed(format!("coarse fit: {e}")))?;
    if cfg.refine.rounds == 0 {
        return Ok(coarse);
    }
    let sm = cfg.structure_smoothing;
    let refined = refine_transform(&structure_map(rgb, sm), &structure_map(tir, sm), &coarse.transform, &cfg.refine, &cfg.fit)?;
    Ok(RobustFit {
        transform: refined,
        ..coarse
    })
}

fn mean_flow_in(flow: &FlowField, b: &BBox) -> (f64, f64) {
    let (h, w) = (flow.height(), flow.width());
    let mut acc = (0.0, 0.0);
    let mut n = 0usize;
    for y in 0..h {
        for x in 0..w {
            let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
            if cx >= b.x1 && cx <= b.x2 && cy >= b.y1 && cy <= b.y2 {
                let d = flow.get(y, x);
                acc.0 += d.0;
                acc.1 += d.1;
                n += 1;
            }
        }
    }
    if n == 0 {
        (0.0, 0.0)
    } else {
        (acc.0 / n as f64, acc.1 / n as f64)
    }
}

/// Warps the non-reference modality onto the reference frame. Ground-truth
/// boxes, which live in the RGB frame, are carried into the TIR frame when
/// TIR is the reference. The returned sample carries no injected transform.
pub fn register_pair(
    sample: &PairedSample,
    method: RegistrationMethod,
    reference: Reference,
    cfg: &RegistrationConfig,
) -> Result<(PairedSample, Alignment)> {
    if sample.rgb.dims() != sample.tir.dims() {
        return Err(Error::ShapeMismatch("registration expects equally sized modalities".into()));
    }
    let (h, w) = sample.dims();
    let mut out = sample.clone();
    out.meta.injected_transform = None;
    match method {
        RegistrationMethod::LoftrStyle => {
            let t = estimate_rgb_to_tir(&sample.rgb, &sample.tir, cfg)?.transform;
            match reference {
                Reference::Rgb => out.tir = apply_transform(&sample.tir, &t.inverse()?)?,
                Reference::Tir => {
                    out.rgb = apply_transform(&sample.rgb, &t)?;
                    out.boxes = carry_boxes(&sample.boxes, |b| b.transformed(&t), w, h);
                }
            }
            Ok((out, Alignment::Transform(t)))
        }
        RegistrationMethod::SuperfusionStyle => {
            let ga = extract_descriptors_with(&sample.rgb, &cfg.descriptor)?;
            let gb = extract_descriptors_with(&sample.tir, &cfg.descriptor)?;
            if textureless(&ga) || textureless(&gb) {
                return Err(Error::RegistrationFailed("no texture to match".into()));
            }
            let sm = cfg.structure_smoothing;
            let (fr, ft) = (structure_map(&sample.rgb, sm), structure_map(&sample.tir, sm));
            let flow = match reference {
                Reference::Rgb => {
                    let flow = estimate_flow(&fr, &ft, &cfg.flow)?;
                    out.tir = warp_with_flow(&sample.tir, &flow)?;
                    flow
                }
                Reference::Tir => {
                    let flow = estimate_flow(&ft, &fr, &cfg.flow)?;
                    out.rgb = warp_with_flow(&sample.rgb, &flow)?;
                    out.boxes = carry_boxes(
                        &sample.boxes,
                        |b| {
                            // Content at RGB position p sits at p - flow in the TIR grid.
                            let (dx, dy) = mean_flow_in(&flow, b);
                            b.translate(-dx, -dy)
                        },
                        w,
                        h,
                    );
                    flow
                }
            };
            Ok((out, Alignment::Flow(flow)))
        }
    }
}

fn carry_boxes(
    boxes: &[crate::detection::LabeledBox],
    f: impl Fn(&BBox) -> BBox,
    w: usize,
    h: usize,
) -> Vec<crate::detection::LabeledBox> {
    boxes
        .iter()
        .filter_map(|b| {
            let nb = f(&b.bbox).clip(w as f64, h as f64);
            (nb.area() >= 1.0).then(|| crate::detection::LabeledBox::new(nb, b.class_id))
        })
        .collect()
}
