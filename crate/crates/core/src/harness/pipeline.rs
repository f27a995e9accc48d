//! One sample through augmentation, registration, detection and fusion.

use crate::augmentation::{augment_geometric, complementary_enhance, pixel_transform, GeometricParams};
use crate::decision_fusion::local_fuse;
use crate::detection::{DetectionSet, LabeledBox, Modality};
use crate::error::{Error, Result};
use crate::feature_fusion::{wire_fusion, IcfeParams, NinParams};
use crate::image::{gaussian_blur, resize, FeatureMap, Image, Raster};
use crate::pixel_fusion::{pixel_fuse, ConvKernel, PixelFusionParams};
use crate::registration::register_pair;
use crate::rng::Seed;
use crate::sample::PairedSample;

use super::config::{ExperimentConfig, FeatureFusionSpec, FusionMode, ParamInit, Phase, PixelFusionSpec};
use super::detect::baseline_detect;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub detections: DetectionSet,
    /// Ground truth in the frame the detections live in.
    pub ground_truth: Vec<LabeledBox>,
    /// Registration was requested but failed, and identity alignment was used.
    pub registration_fallback: bool,
}

/// Seed streams: `derive(0)` augmentation, `derive(1)` fusion parameters
/// and noise.
pub fn augment_sample(sample: &PairedSample, cfg: &ExperimentConfig, seed: &Seed) -> Result<PairedSample> {
    let aug = &cfg.augmentation;
    let mut s = sample.clone();
    if let Some(ranges) = &aug.geometric {
        let (h, w) = s.dims();
        let g = GeometricParams::sample(ranges, w, h, &seed.derive(0));
        s = augment_geometric(&s, &g, &seed.derive(1))?.0;
    }
    if let Some(p) = &aug.pixel {
        let ps = seed.derive(2);
        s.rgb = pixel_transform(&s.rgb, p, &ps)?;
        s.tir = pixel_transform(&s.tir, p, &ps)?;
    }
    let (rgb, tir) = complementary_enhance(&s.rgb, &s.tir, &aug.enhance, &seed.derive(3))?;
    s.rgb = rgb;
    s.tir = tir;
    Ok(s)
}

fn pixel_params(spec: &PixelFusionSpec, h: usize, w: usize, seed: &Seed) -> Result<PixelFusionParams> {
    let mut p = PixelFusionParams::uniform(h, w, spec.weight_rgb, spec.weight_tir, spec.alpha_rgb, spec.alpha_tir);
    p.sigma_noise = spec.sigma_noise;
    if spec.perturb_kernels {
        p.kernel_rgb = ConvKernel::perturbed_identity(3, 0.05, &seed.derive(0))?;
        p.kernel_tir = ConvKernel::perturbed_identity(3, 0.05, &seed.derive(1))?;
    }
    Ok(p)
}

/// Blur-then-subsample a 3-channel view of `image` onto the feature grid.
fn feature_grid(image: &Image, stride: usize) -> FeatureMap {
    let (h, w) = image.dims();
    let fm = image.to_feature_map();
    let fm = if image.channels() == 1 {
        FeatureMap::from_fn(h, w, 3, |y, x, _| fm.at(y, x, 0))
    } else {
        fm
    };
    if stride <= 1 {
        return fm;
    }
    let blurred = gaussian_blur(&fm, 0.5 * stride as f64);
    resize(&blurred, h.div_ceil(stride), w.div_ceil(stride))
}

/// Fuses feature grids and decodes the channel mean back to an image-sized
/// score map, min-max normalized to `[0, 1]` (a flat map decodes to zeros).
/// Residual and attention terms shift the fused values by an arbitrary
/// offset, which a fixed detection threshold cannot absorb.
pub fn feature_fuse_to_image(rgb: &Image, tir: &Image, spec: &FeatureFusionSpec, seed: &Seed) -> Result<Image> {
    let (h, w) = rgb.dims();
    let x_rgb = feature_grid(rgb, spec.stride);
    let x_tir = feature_grid(tir, spec.stride);
    let dim = x_rgb.channels();
    let (nin, icfe) = match spec.init {
        ParamInit::Identity => (NinParams::zeros(dim), IcfeParams::block_identity(dim, spec.heads, spec.iterations)?),
        ParamInit::Seeded => (
            NinParams::init(dim, &seed.derive(0)),
            IcfeParams::init(dim, spec.heads, spec.iterations, &seed.derive(1))?,
        ),
    };
    let fused = wire_fusion(&x_rgb, &x_tir, spec.wiring, spec.pairing, &nin, &icfe)?;
    let up = resize(&fused.channel_mean(), h, w);
    let (lo, hi) = up
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    let data = if range.is_finite() && range > 1e-12 {
        up.data().iter().map(|v| (v - lo) / range).collect()
    } else {
        vec![0.0; h * w]
    };
    Ok(Image::from_clamped(h, w, 1, data))
}

/// The fused image that the pixel and feature modes hand to the detector.
/// Other modes have no single fused image.
pub fn fused_image(rgb: &Image, tir: &Image, cfg: &ExperimentConfig, seed: &Seed) -> Result<Image> {
    match cfg.fusion.mode {
        FusionMode::Pixel => {
            let (h, w) = rgb.dims();
            let params = pixel_params(&cfg.fusion.pixel, h, w, &seed.derive(0))?;
            pixel_fuse(rgb, tir, &params, &seed.derive(1))
        }
        FusionMode::Feature => feature_fuse_to_image(rgb, tir, &cfg.fusion.feature, seed),
        other => Err(Error::BadConfig(format!("fusion mode `{other}` produces no fused image"))),
    }
}

/// Runs one sample. A `RegistrationFailed` error falls back to the
/// unregistered sample and sets the flag; other errors propagate.
pub fn run_pipeline(sample: &PairedSample, cfg: &ExperimentConfig, seed: &Seed) -> Result<PipelineOutput> {
    let mut s = augment_sample(sample, cfg, &seed.derive(0))?;
    let mut registration_fallback = false;
    let stage = &cfg.registration;
    if let (Some(method), Phase::TestSide) = (stage.method.method(), stage.phase) {
        match register_pair(&s, method, stage.reference, &stage.params) {
            Ok((aligned, _)) => s = aligned,
            Err(Error::RegistrationFailed(msg)) => {
                log::debug!("registration fell back to identity: {msg}");
                registration_fallback = true;
            }
            Err(e) => return Err(e),
        }
    }
    let det = &cfg.detector;
    let fusion_seed = seed.derive(1);
    let detections = match cfg.fusion.mode {
        FusionMode::RgbOnly => baseline_detect(&s.rgb, &det.rgb, Modality::Rgb)?,
        FusionMode::TirOnly => baseline_detect(&s.tir, &det.tir, Modality::Tir)?,
        FusionMode::Pixel | FusionMode::Feature => {
            let fused = fused_image(&s.rgb, &s.tir, cfg, &fusion_seed)?;
            baseline_detect(&fused, &det.fused, Modality::Fused)?
        }
        FusionMode::Decision => {
            let rgb = baseline_detect(&s.rgb, &det.rgb, Modality::Rgb)?;
            let tir = baseline_detect(&s.tir, &det.tir, Modality::Tir)?;
            local_fuse(&rgb, &tir, &cfg.fusion.policy)?
        }
    };
    Ok(PipelineOutput {
        detections,
        ground_truth: s.boxes,
        registration_fallback,
    })
}
