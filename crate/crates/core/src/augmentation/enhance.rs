//! Multimodal enhancement: per-modality op chains, optionally injected with
//! the other modality's normalized edge map.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::clahe::{clahe, ClaheParams};
use super::pixel::{light_enhance, random_lighting};
use crate::error::{Error, Result};
use crate::image::{clamp_index, FeatureMap, Image, Raster};
use crate::rng::Seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnhanceOp {
    Clahe {
        #[serde(default = "default_tiles")]
        tiles: (usize, usize),
        #[serde(default = "default_clip")]
        clip_limit: f64,
    },
    RandomLighting,
    LightEnhance,
    None,
}

fn default_tiles() -> (usize, usize) {
    ClaheParams::default().tiles
}

fn default_clip() -> f64 {
    ClaheParams::default().clip_limit
}

impl FromStr for EnhanceOp {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "clahe" => Ok(EnhanceOp::Clahe {
                tiles: default_tiles(),
                clip_limit: default_clip(),
            }),
            "random_lighting" => Ok(EnhanceOp::RandomLighting),
            "light_enhance" => Ok(EnhanceOp::LightEnhance),
            "none" => Ok(EnhanceOp::None),
            other => Err(Error::UnknownOp(other.to_string())),
        }
    }
}

impl EnhanceOp {
    pub fn apply(&self, image: &Image, seed: &Seed) -> Image {
        match *self {
            EnhanceOp::Clahe { tiles, clip_limit } => clahe(image, &ClaheParams { tiles, clip_limit }),
            EnhanceOp::RandomLighting => random_lighting(image, seed),
            EnhanceOp::LightEnhance => light_enhance(image),
            EnhanceOp::None => image.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnhanceMode {
    /// Both modalities run `rgb_ops` with the same seed and no cross term.
    Synchronized,
    #[default]
    Complementary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureExtractor {
    #[default]
    SobelEdges,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnhancePolicy {
    pub mode: EnhanceMode,
    pub rgb_ops: Vec<EnhanceOp>,
    pub tir_ops: Vec<EnhanceOp>,
    /// Gain on the RGB edge map injected into the TIR image.
    pub gain_rgb: f64,
    /// Gain on the TIR edge map injected into the RGB image.
    pub gain_tir: f64,
    pub extractor: FeatureExtractor,
}

impl Default for EnhancePolicy {
    fn default() -> Self {
        Self {
            mode: EnhanceMode::Complementary,
            rgb_ops: Vec::new(),
            tir_ops: Vec::new(),
            gain_rgb: 0.0,
            gain_tir: 0.0,
            extractor: FeatureExtractor::SobelEdges,
        }
    }
}

/// Sobel gradient magnitude of the gray image with replicated borders,
/// divided by its maximum. A flat image gives all zeros.
pub fn sobel_edges(image: &Image) -> FeatureMap {
    let gray = image.to_gray();
    let (h, w) = gray.dims();
    let at = |y: isize, x: isize| gray.at(clamp_index(y, h), clamp_index(x, w), 0);
    let mut mag = FeatureMap::from_fn(h, w, 1, |y, x, _| {
        let (y, x) = (y as isize, x as isize);
        let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
            - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
        let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
            - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
        gx.hypot(gy)
    });
    let peak = mag.data().iter().fold(0.0f64, |m, &v| m.max(v));
    if peak > 0.0 {
        mag.data_mut().iter_mut().for_each(|v| *v /= peak);
    }
    mag
}

pub fn extract_features(image: &Image, extractor: FeatureExtractor) -> FeatureMap {
    match extractor {
        FeatureExtractor::SobelEdges => sobel_edges(image),
    }
}

/// Runs `ops` in order; op `k` draws from `seed.derive(k)`.
pub fn apply_chain(image: &Image, ops: &[EnhanceOp], seed: &Seed) -> Image {
    ops.iter()
        .enumerate()
        .fold(image.clone(), |img, (k, op)| op.apply(&img, &seed.derive(k as u64)))
}

fn inject(image: Image, cross: &FeatureMap, gain: f64) -> Image {
    if gain == 0.0 {
        return image;
    }
    let ch = image.channels();
    let (h, w) = image.dims();
    let mut data = image.into_data();
    for (i, v) in data.iter_mut().enumerate() {
        *v += gain * cross.data()[i / ch];
    }
    Image::from_clamped(h, w, ch, data)
}

/// Returns `(rgb', tir')` with
/// `rgb' = clamp(ops_R(rgb) + gain_tir * L(tir))` and
/// `tir' = clamp(ops_T(tir) + gain_rgb * L(rgb))`. Edge maps come from the
/// unenhanced inputs.
pub fn complementary_enhance(rgb: &Image, tir: &Image, policy: &EnhancePolicy, seed: &Seed) -> Result<(Image, Image)> {
    if rgb.dims() != tir.dims() {
        return Err(Error::ShapeMismatch("enhancement needs a registered pair".into()));
    }
    match policy.mode {
        EnhanceMode::Synchronized => {
            let s = seed.derive(0);
            Ok((apply_chain(rgb, &policy.rgb_ops, &s), apply_chain(tir, &policy.rgb_ops, &s)))
        }
        EnhanceMode::Complementary => {
            let l_rgb = extract_features(rgb, policy.extractor);
            let l_tir = extract_features(tir, policy.extractor);
            let r = apply_chain(rgb, &policy.rgb_ops, &seed.derive(0));
            let t = apply_chain(tir, &policy.tir_ops, &seed.derive(1));
            Ok((inject(r, &l_tir, policy.gain_tir), inject(t, &l_rgb, policy.gain_rgb)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Image {
        let mut rng = Seed::new(seed).rng();
        Image::from_fn(h, w, c, |_, _, _| rng.next_f64())
    }

    #[test]
    fn empty_policy_is_identity() {
        let rgb = random_image(6, 6, 3, 1);
        let tir = random_image(6, 6, 1, 2);
        let (r, t) = complementary_enhance(&rgb, &tir, &EnhancePolicy::default(), &Seed::new(0)).unwrap();
        assert_eq!((r, t), (rgb, tir));
    }

    #[test]
    fn flat_tir_leaves_rgb_alone() {
        let rgb = random_image(6, 6, 3, 1);
        let tir = Image::filled(6, 6, 1, 0.4);
        let policy = EnhancePolicy {
            gain_tir: 1.0,
            ..Default::default()
        };
        let (r, _) = complementary_enhance(&rgb, &tir, &policy, &Seed::new(0)).unwrap();
        assert_eq!(r, rgb);
    }

    #[test]
    fn step_edge_ridge() {
        let rgb = Image::filled(5, 8, 3, 0.2);
        let tir = Image::from_fn(5, 8, 1, |_, x, _| if x < 4 { 0.0 } else { 1.0 });
        // Hand Sobel: gx = 4 on columns 3 and 4 (replicated rows), 0 elsewhere;
        // normalized to 1 there.
        let policy = EnhancePolicy {
            gain_tir: 0.5,
            ..Default::default()
        };
        let (r, _) = complementary_enhance(&rgb, &tir, &policy, &Seed::new(0)).unwrap();
        for y in 0..5 {
            for x in 0..8 {
                let want = if x == 3 || x == 4 { 0.7 } else { 0.2 };
                for c in 0..3 {
                    assert!((r.at(y, x, c) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn synchronized_shares_random_draws() {
        let img = random_image(6, 6, 1, 4);
        let rgb = Image::from_planes(&[img.clone(), img.clone(), img.clone()]).unwrap();
        let policy = EnhancePolicy {
            mode: EnhanceMode::Synchronized,
            rgb_ops: vec![EnhanceOp::RandomLighting],
            gain_tir: 1.0,
            ..Default::default()
        };
        let (r, t) = complementary_enhance(&rgb, &img, &policy, &Seed::new(5)).unwrap();
        assert_eq!(r.channel(0), t);
    }

    #[test]
    fn op_registry() {
        assert_eq!("light_enhance".parse::<EnhanceOp>().unwrap(), EnhanceOp::LightEnhance);
        assert!(matches!("sharpen".parse::<EnhanceOp>(), Err(Error::UnknownOp(_))));
        let op: EnhanceOp = serde_json::from_str(r#"{"op":"clahe","clip_limit":3.0}"#).unwrap();
        assert_eq!(
            op,
            EnhanceOp::Clahe {
                tiles: (8, 8),
                clip_limit: 3.0
            }
        );
    }
}
