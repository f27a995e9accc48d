//! Photometric transforms: noise, color gain, contrast and lighting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Raster};
use crate::rng::Seed;

/// Center used by [`adjust_contrast`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuMode {
    #[default]
    GlobalMean,
    PerChannelMean,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PixelParams {
    pub sigma: f64,
    /// Per-channel gains; a single value applies to every channel.
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub mu_mode: MuMode,
}

impl Default for PixelParams {
    fn default() -> Self {
        Self {
            sigma: 0.0,
            alpha: vec![1.0],
            beta: 1.0,
            mu_mode: MuMode::GlobalMean,
        }
    }
}

impl PixelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) {
            return Err(Error::InvalidParameter("sigma must be >= 0".into()));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::InvalidParameter("beta must be >= 0".into()));
        }
        if self.alpha.is_empty() || self.alpha.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::InvalidParameter("alpha needs non-negative entries".into()));
        }
        Ok(())
    }
}

/// `P + N(0, sigma^2)` per element (row-major draws), clamped.
pub fn add_noise(p: &Image, sigma: f64, seed: &Seed) -> Image {
    if sigma <= 0.0 {
        return p.clone();
    }
    let mut rng = seed.rng();
    let data = p.data().iter().map(|&v| v + sigma * rng.normal()).collect();
    Image::from_clamped(p.height(), p.width(), p.channels(), data)
}

fn gain_for(alpha: &[f64], c: usize) -> f64 {
    *alpha.get(c).unwrap_or(&alpha[0])
}

/// Per-channel gain, clamped. Channels beyond `alpha.len()` use `alpha[0]`.
pub fn adjust_color(p: &Image, alpha: &[f64]) -> Image {
    if alpha.is_empty() {
        return p.clone();
    }
    let ch = p.channels();
    let data = p
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| gain_for(alpha, i % ch) * v)
        .collect();
    Image::from_clamped(p.height(), p.width(), ch, data)
}

/// `beta (P - mu) + mu`, clamped.
pub fn adjust_contrast(p: &Image, beta: f64, mu_mode: MuMode) -> Image {
    let ch = p.channels();
    let mu: Vec<f64> = match mu_mode {
        MuMode::GlobalMean => vec![p.mean(); ch],
        MuMode::PerChannelMean => p.channel_means(),
        MuMode::Fixed(v) => vec![v; ch],
    };
    let data = p
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let m = mu[i % ch];
            beta * (v - m) + m
        })
        .collect();
    Image::from_clamped(p.height(), p.width(), ch, data)
}

/// Noise, then color, then contrast. The contrast center is measured on the
/// color-adjusted image.
pub fn pixel_transform(p: &Image, params: &PixelParams, seed: &Seed) -> Result<Image> {
    params.validate()?;
    let noisy = add_noise(p, params.sigma, seed);
    let colored = adjust_color(&noisy, &params.alpha);
    Ok(adjust_contrast(&colored, params.beta, params.mu_mode))
}

/// `clamp(gain * P^gamma)`.
pub fn gamma_gain(p: &Image, gamma: f64, gain: f64) -> Image {
    Image::from_clamped(
        p.height(),
        p.width(),
        p.channels(),
        p.data().iter().map(|&v| gain * v.powf(gamma)).collect(),
    )
}

/// Random gamma in `[0.5, 1.5]` then random gain in `[0.8, 1.2]`.
pub fn random_lighting(p: &Image, seed: &Seed) -> Image {
    let mut rng = seed.rng();
    let gamma = rng.uniform(0.5, 1.5);
    let gain = rng.uniform(0.8, 1.2);
    gamma_gain(p, gamma, gain)
}

pub const LIGHT_ENHANCE_GAMMA: f64 = 0.7;

/// Fixed brightening gamma `P^0.7`.
pub fn light_enhance(p: &Image) -> Image {
    gamma_gain(p, LIGHT_ENHANCE_GAMMA, 1.0)
}
