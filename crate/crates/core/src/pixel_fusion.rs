//! Pixel-level RGB/TIR fusion.
//!
//! The thermal image is replicated to three channels, blended with the RGB
//! image through per-pixel weight maps plus Gaussian sensor noise, and each
//! modality is refined by its own `k x k x 3 x 3` convolution. The final
//! image gates each refined modality with
//! `sigmoid(W + alpha * tanh(G(interim)))`, where `G` is a spatial filter
//! over the noisy blend.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{reflect_index, FeatureMap, Image, Raster};
use crate::rng::Seed;

/// Convolution weights indexed `[ky][kx][c_in][c_out]` for 3 input and 3
/// output channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    size: usize,
    weights: Vec<f64>,
}

impl ConvKernel {
    pub const CHANNELS: usize = 3;

    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(Error::BadKernelShape(format!("kernel size {size} must be odd")));
        }
        let expected = size * size * Self::CHANNELS * Self::CHANNELS;
        if weights.len() != expected {
            return Err(Error::BadKernelShape(format!(
                "{} weights for a {size}x{size}x3x3 kernel (expected {expected})",
                weights.len()
            )));
        }
        Ok(Self { size, weights })
    }

    /// Centre tap is the channel identity, all other taps zero.
    pub fn identity(size: usize) -> Result<Self> {
        let mut k = Self::new(size, vec![0.0; size * size * 9])?;
        let r = size / 2;
        for c in 0..3 {
            k.set(r, r, c, c, 1.0);
        }
        Ok(k)
    }

    /// Every tap of every (c, c) pair equal to `1 / size^2`; channels do not mix.
    pub fn box_filter(size: usize) -> Result<Self> {
        let mut k = Self::new(size, vec![0.0; size * size * 9])?;
        let v = 1.0 / (size * size) as f64;
        for ky in 0..size {
            for kx in 0..size {
                for c in 0..3 {
                    k.set(ky, kx, c, c, v);
                }
            }
        }
        Ok(k)
    }

    /// Identity plus a uniform `(-amplitude, amplitude)` perturbation on every tap.
    pub fn perturbed_identity(size: usize, amplitude: f64, seed: &Seed) -> Result<Self> {
        let mut k = Self::identity(size)?;
        let mut rng = seed.rng();
        for w in &mut k.weights {
            *w += rng.uniform(-amplitude, amplitude);
        }
        Ok(k)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, ky: usize, kx: usize, cin: usize, cout: usize) -> f64 {
        self.weights[((ky * self.size + kx) * 3 + cin) * 3 + cout]
    }

    pub fn set(&mut self, ky: usize, kx: usize, cin: usize, cout: usize, v: f64) {
        self.weights[((ky * self.size + kx) * 3 + cin) * 3 + cout] = v;
    }
}

/// The spatial operator `G` inside the gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateFilter {
    #[default]
    Mean3x3,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelFusionParams {
    pub weight_rgb: FeatureMap,
    pub weight_tir: FeatureMap,
    pub alpha_rgb: FeatureMap,
    pub alpha_tir: FeatureMap,
    pub kernel_rgb: ConvKernel,
    pub kernel_tir: ConvKernel,
    pub bias_rgb: [f64; 3],
    pub bias_tir: [f64; 3],
    pub sigma_noise: f64,
    pub clamp_output: bool,
    pub gate_filter: GateFilter,
}

impl PixelFusionParams {
    /// Spatially constant weights and scales, identity kernels, zero biases
    /// and the default noise level of 0.01.
    pub fn uniform(
        height: usize,
        width: usize,
        weight_rgb: f64,
        weight_tir: f64,
        alpha_rgb: f64,
        alpha_tir: f64,
    ) -> Self {
        let map = |v| FeatureMap::filled(height, width, 3, v);
        Self {
            weight_rgb: map(weight_rgb),
            weight_tir: map(weight_tir),
            alpha_rgb: map(alpha_rgb),
            alpha_tir: map(alpha_tir),
            kernel_rgb: ConvKernel::identity(3).expect("odd size"),
            kernel_tir: ConvKernel::identity(3).expect("odd size"),
            bias_rgb: [0.0; 3],
            bias_tir: [0.0; 3],
            sigma_noise: 0.01,
            clamp_output: true,
            gate_filter: GateFilter::Mean3x3,
        }
    }

    /// Untrained starting point: zero weight maps, gate scale 0.5 and 3x3
    /// kernels at identity plus a `(-0.05, 0.05)` perturbation drawn from `seed`.
    pub fn init(height: usize, width: usize, seed: &Seed) -> Self {
        let mut p = Self::uniform(height, width, 0.0, 0.0, 0.5, 0.5);
        p.kernel_rgb = ConvKernel::perturbed_identity(3, 0.05, &seed.derive(0)).expect("odd size");
        p.kernel_tir = ConvKernel::perturbed_identity(3, 0.05, &seed.derive(1)).expect("odd size");
        p
    }

    fn validate(&self, height: usize, width: usize) -> Result<()> {
        for (name, m) in [
            ("weight_rgb", &self.weight_rgb),
            ("weight_tir", &self.weight_tir),
            ("alpha_rgb", &self.alpha_rgb),
            ("alpha_tir", &self.alpha_tir),
        ] {
            if m.dims() != (height, width) || m.channels() != 3 {
                return Err(Error::ShapeMismatch(format!(
                    "{name} is {}x{}x{}, image is {height}x{width}x3",
                    m.height(),
                    m.width(),
                    m.channels()
                )));
            }
        }
        if !(self.sigma_noise >= 0.0) {
            return Err(Error::InvalidParameter("sigma_noise must be >= 0".into()));
        }
        Ok(())
    }
}

/// Replicates a 1-channel thermal image into three identical channels.
pub fn expand_tir(tir: &Image) -> Result<Image> {
    if tir.channels() != 1 {
        return Err(Error::ChannelMismatch {
            expected: 1,
            found: tir.channels(),
        });
    }
    let data = tir.data().iter().flat_map(|&v| [v, v, v]).collect();
    Image::new(tir.height(), tir.width(), 3, data)
}

/// `W_R * rgb + W_T * tir3 + n`, with `n` i.i.d. `N(0, sigma^2)` per element
/// drawn from `seed` in row-major order. The result is not clamped.
pub fn interim_fuse(rgb: &Image, tir3: &Image, params: &PixelFusionParams, seed: &Seed) -> Result<FeatureMap> {
    if rgb.dims() != tir3.dims() || rgb.channels() != 3 || tir3.channels() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "rgb {}x{}x{} vs tir {}x{}x{}",
            rgb.height(),
            rgb.width(),
            rgb.channels(),
            tir3.height(),
            tir3.width(),
            tir3.channels()
        )));
    }
    params.validate(rgb.height(), rgb.width())?;
    let mut rng = seed.rng();
    let sigma = params.sigma_noise;
    let data = rgb
        .data()
        .iter()
        .zip(tir3.data())
        .zip(params.weight_rgb.data().iter().zip(params.weight_tir.data()))
        .map(|((&r, &t), (&wr, &wt))| {
            let noise = if sigma > 0.0 { sigma * rng.normal() } else { 0.0 };
            wr * r + wt * t + noise
        })
        .collect();
    FeatureMap::new(rgb.height(), rgb.width(), 3, data)
}

/// Direct 2-D cross-correlation with reflect padding plus a per-channel bias.
pub fn conv_refine<R: Raster>(image: &R, kernel: &ConvKernel, bias: &[f64; 3]) -> Result<FeatureMap> {
    if image.channels() != 3 {
        return Err(Error::BadKernelShape(format!(
            "kernel expects 3 input channels, image has {}",
            image.channels()
        )));
    }
    let (h, w) = image.dims();
    let k = kernel.size();
    let r = (k / 2) as isize;
    let mut out = FeatureMap::zeros(h, w, 3);
    let data = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let mut acc = *bias;
            for ky in 0..k {
                let yy = reflect_index(y as isize + ky as isize - r, h);
                for kx in 0..k {
                    let xx = reflect_index(x as isize + kx as isize - r, w);
                    let px = image.pixel(yy, xx);
                    for (cin, &v) in px.iter().enumerate() {
                        for (cout, a) in acc.iter_mut().enumerate() {
                            *a += kernel.get(ky, kx, cin, cout) * v;
                        }
                    }
                }
            }
            data[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&acc);
        }
    }
    Ok(out)
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn mean3x3(src: &FeatureMap) -> FeatureMap {
    let (h, w, ch) = (src.height(), src.width(), src.channels());
    FeatureMap::from_fn(h, w, ch, |y, x, c| {
        let mut acc = 0.0;
        for dy in -1..=1 {
            for dx in -1..=1 {
                let yy = reflect_index(y as isize + dy, h);
                let xx = reflect_index(x as isize + dx, w);
                acc += src.at(yy, xx, c);
            }
        }
        acc / 9.0
    })
}

/// `sigmoid(W + alpha * tanh(G(interim)))`, element-wise.
pub fn gate(interim: &FeatureMap, weight: &FeatureMap, alpha: &FeatureMap, filter: GateFilter) -> Result<FeatureMap> {
    if !interim.same_shape(weight) || !interim.same_shape(alpha) {
        return Err(Error::ShapeMismatch("gate inputs must share a shape".into()));
    }
    let filtered = match filter {
        GateFilter::Mean3x3 => mean3x3(interim),
        GateFilter::Identity => interim.clone(),
    };
    let data = filtered
        .data()
        .iter()
        .zip(weight.data().iter().zip(alpha.data()))
        .map(|(&g, (&w, &a))| sigmoid(w + a * g.tanh()))
        .collect();
    FeatureMap::new(interim.height(), interim.width(), interim.channels(), data)
}

/// Unclamped fused raster `F_R * phi_R + F_T * phi_T`.
pub fn pixel_fuse_raw(rgb: &Image, tir: &Image, params: &PixelFusionParams, seed: &Seed) -> Result<FeatureMap> {
    let pair = crate::sample::validate_pair(rgb.clone(), tir.clone())?;
    if !pair.same_dims() {
        return Err(Error::ShapeMismatch(format!(
            "pixel fusion needs registered inputs: rgb {:?}, tir {:?}",
            pair.rgb_dims(),
            pair.tir_dims()
        )));
    }
    let tir3 = expand_tir(tir)?;
    let interim = interim_fuse(rgb, &tir3, params, seed)?;
    let phi_rgb = conv_refine(rgb, &params.kernel_rgb, &params.bias_rgb)?;
    let phi_tir = conv_refine(&tir3, &params.kernel_tir, &params.bias_tir)?;
    let gate_rgb = gate(&interim, &params.weight_rgb, &params.alpha_rgb, params.gate_filter)?;
    let gate_tir = gate(&interim, &params.weight_tir, &params.alpha_tir, params.gate_filter)?;
    let a = gate_rgb.zip_with(&phi_rgb, |g, p| g * p)?;
    let b = gate_tir.zip_with(&phi_tir, |g, p| g * p)?;
    a.zip_with(&b, |u, v| u + v)
}

/// Fused image. With `clamp_output` off, values outside `[0, 1]` are an error
/// rather than a silently invalid image; use [`pixel_fuse_raw`] to inspect them.
pub fn pixel_fuse(rgb: &Image, tir: &Image, params: &PixelFusionParams, seed: &Seed) -> Result<Image> {
    let raw = pixel_fuse_raw(rgb, tir, params, seed)?;
    let image = if params.clamp_output {
        raw.to_image_clamped()?
    } else {
        Image::new(raw.height(), raw.width(), 3, raw.into_data())?
    };
    debug_assert!(image.is_valid());
    Ok(image)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn const_image(h: usize, w: usize, c: usize, v: f64) -> Image {
        Image::filled(h, w, c, v)
    }

    #[test]
    fn expand_replicates() {
        let tir = const_image(2, 2, 1, 0.5);
        let t3 = expand_tir(&tir).unwrap();
        assert_eq!(t3.channels(), 3);
        assert!(t3.data().iter().all(|&v| v == 0.5));
        assert!(expand_tir(&const_image(2, 2, 3, 0.5)).is_err());
    }

    #[test]
    fn expand_random_bitwise() {
        let mut rng = Seed::new(11).rng();
        let tir = Image::from_fn(8, 8, 1, |_, _, _| rng.next_f64());
        let t3 = expand_tir(&tir).unwrap();
        for c in 0..3 {
            assert_eq!(t3.channel(c), tir);
        }
    }

    #[test]
    fn interim_passthrough_and_average() {
        let rgb = const_image(3, 3, 3, 0.2);
        let tir3 = const_image(3, 3, 3, 0.6);
        let mut p = PixelFusionParams::uniform(3, 3, 1.0, 0.0, 0.0, 0.0);
        p.sigma_noise = 0.0;
        let out = interim_fuse(&rgb, &tir3, &p, &Seed::new(0)).unwrap();
        assert_eq!(out.data(), rgb.data());
        let mut p = PixelFusionParams::uniform(3, 3, 0.5, 0.5, 0.0, 0.0);
        p.sigma_noise = 0.0;
        let out = interim_fuse(&rgb, &tir3, &p, &Seed::new(0)).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn interim_rejects_shape_mismatch() {
        let p = PixelFusionParams::uniform(3, 3, 0.5, 0.5, 0.0, 0.0);
        let e = interim_fuse(&const_image(3, 3, 3, 0.0), &const_image(3, 4, 3, 0.0), &p, &Seed::new(0));
        assert!(matches!(e, Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn interim_noise_mean_is_deterministic_part() {
        // Monte-Carlo: 10^4 seeds at sigma = 0.01, the sample mean of one
        // pixel must lie within 3 * sigma / sqrt(10^4) of the noiseless blend.
        let rgb = const_image(2, 2, 3, 0.2);
        let tir3 = const_image(2, 2, 3, 0.6);
        let mut p = PixelFusionParams::uniform(2, 2, 0.5, 0.5, 0.0, 0.0);
        p.sigma_noise = 0.01;
        let root = Seed::new(123);
        let n = 10_000;
        let mean = (0..n)
            .map(|i| interim_fuse(&rgb, &tir3, &p, &root.derive(i)).unwrap().at(1, 1, 2))
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.4).abs() <= 3.0 * 0.01 / 100.0, "mean {mean}");
    }

    #[test]
    fn identity_kernel_is_passthrough() {
        let mut rng = Seed::new(2).rng();
        let img = Image::from_fn(5, 4, 3, |_, _, _| rng.next_f64());
        let out = conv_refine(&img, &ConvKernel::identity(3).unwrap(), &[0.0; 3]).unwrap();
        assert_eq!(out.data(), img.data());
    }

    #[test]
    fn box_kernel_preserves_constants() {
        let img = const_image(6, 6, 3, 0.37);
        let out = conv_refine(&img, &ConvKernel::box_filter(3).unwrap(), &[0.0; 3]).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.37).abs() < 1e-12));
    }

    // Pads explicitly (mirror without repeating the edge) and then runs the
    // textbook four-deep loop, so it shares no indexing code with conv_refine.
    fn naive_conv(img: &Image, k: &ConvKernel, bias: &[f64; 3]) -> Vec<f64> {
        let (h, w) = img.dims();
        let r = k.size() / 2;
        let (ph, pw) = (h + 2 * r, w + 2 * r);
        let mirror = |i: i64, n: i64| -> usize {
            let mut i = i;
            while i < 0 || i >= n {
                if i < 0 {
                    i = -i;
                }
                if i >= n {
                    i = 2 * (n - 1) - i;
                }
            }
            i as usize
        };
        let mut padded = vec![0.0; ph * pw * 3];
        for y in 0..ph {
            for x in 0..pw {
                let sy = mirror(y as i64 - r as i64, h as i64);
                let sx = mirror(x as i64 - r as i64, w as i64);
                for c in 0..3 {
                    padded[(y * pw + x) * 3 + c] = img.at(sy, sx, c);
                }
            }
        }
        let mut out = vec![0.0; h * w * 3];
        for y in 0..h {
            for x in 0..w {
                for co in 0..3 {
                    let mut s = bias[co];
                    for ky in 0..k.size() {
                        for kx in 0..k.size() {
                            for ci in 0..3 {
                                s += k.get(ky, kx, ci, co) * padded[((y + ky) * pw + x + kx) * 3 + ci];
                            }
                        }
                    }
                    out[(y * w + x) * 3 + co] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let mut rng = Seed::new(31).rng();
        for (h, w, k) in [(4, 4, 3), (8, 8, 3), (5, 7, 5), (3, 3, 5)] {
            let img = Image::from_fn(h, w, 3, |_, _, _| rng.next_f64());
            let weights = (0..k * k * 9).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let kernel = ConvKernel::new(k, weights).unwrap();
            let bias = [rng.next_f64(), -0.3, 0.1];
            let got = conv_refine(&img, &kernel, &bias).unwrap();
            for (a, b) in got.data().iter().zip(naive_conv(&img, &kernel, &bias)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gate_stays_inside_open_interval() {
        let mut rng = Seed::new(8).rng();
        let interim = FeatureMap::from_fn(4, 4, 3, |_, _, _| rng.uniform(-50.0, 50.0));
        let w = FeatureMap::from_fn(4, 4, 3, |_, _, _| rng.uniform(-20.0, 20.0));
        let a = FeatureMap::from_fn(4, 4, 3, |_, _, _| rng.uniform(-5.0, 5.0));
        let g = gate(&interim, &w, &a, GateFilter::Mean3x3).unwrap();
        assert!(g.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(matches!(ConvKernel::new(2, vec![0.0; 36]), Err(Error::BadKernelShape(_))));
        assert!(matches!(ConvKernel::new(3, vec![0.0; 10]), Err(Error::BadKernelShape(_))));
    }

    #[test]
    fn gate_scalar_values() {
        let z = FeatureMap::zeros(2, 2, 3);
        let g = gate(&z, &z, &z, GateFilter::Mean3x3).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.5));

        let w10 = FeatureMap::filled(2, 2, 3, 10.0);
        let g = gate(&z, &w10, &z, GateFilter::Mean3x3).unwrap();
        // 1 / (1 + e^-10)
        assert!(g.data().iter().all(|&v| (v - 0.999_954_6).abs() < 1e-7));

        let ones = FeatureMap::filled(2, 2, 3, 1.0);
        let g = gate(&ones, &z, &ones, GateFilter::Mean3x3).unwrap();
        // sigmoid(tanh(1)) = sigmoid(0.761594...) = 0.681704...
        assert!(g.data().iter().all(|&v| (v - 0.681_70).abs() < 1e-5), "{:?}", g.data()[0]);
    }

    #[test]
    fn fuse_scalar_case() {
        let rgb = const_image(4, 4, 3, 0.2);
        let tir = const_image(4, 4, 1, 0.6);
        let mut p = PixelFusionParams::uniform(4, 4, 1.0, 0.0, 0.0, 0.0);
        p.sigma_noise = 0.0;
        let out = pixel_fuse(&rgb, &tir, &p, &Seed::new(0)).unwrap();
        let expected = sigmoid(1.0) * 0.2 + 0.5 * 0.6;
        assert!((expected - 0.44621).abs() < 1e-5);
        assert!(out.data().iter().all(|&v| (v - expected).abs() < 1e-12));
    }

    #[test]
    fn symmetric_inputs_share_phi() {
        let mut rng = Seed::new(9).rng();
        let tir = Image::from_fn(5, 5, 1, |_, _, _| rng.next_f64());
        let rgb = expand_tir(&tir).unwrap();
        let mut p = PixelFusionParams::uniform(5, 5, 0.3, 0.3, 0.7, 0.7);
        p.sigma_noise = 0.0;
        p.clamp_output = false;
        let fused = pixel_fuse_raw(&rgb, &tir, &p, &Seed::new(0)).unwrap();
        let interim = interim_fuse(&rgb, &rgb, &p, &Seed::new(0)).unwrap();
        let g = gate(&interim, &p.weight_rgb, &p.alpha_rgb, p.gate_filter).unwrap();
        for (i, &v) in fused.data().iter().enumerate() {
            let expected = 2.0 * g.data()[i] * rgb.data()[i];
            assert!((v - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_fusion_is_pure() {
        let mut rng = Seed::new(4).rng();
        let rgb = Image::from_fn(6, 7, 3, |_, _, _| rng.next_f64());
        let tir = Image::from_fn(6, 7, 1, |_, _, _| rng.next_f64());
        let mut p = PixelFusionParams::init(6, 7, &Seed::new(1));
        p.sigma_noise = 0.0;
        let a = pixel_fuse(&rgb, &tir, &p, &Seed::new(5)).unwrap();
        let b = pixel_fuse(&rgb, &tir, &p, &Seed::new(77)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dims(), rgb.dims());
    }

    #[test]
    fn unregistered_pair_rejected() {
        let p = PixelFusionParams::uniform(4, 4, 0.5, 0.5, 0.0, 0.0);
        let e = pixel_fuse(&const_image(4, 4, 3, 0.1), &const_image(3, 3, 1, 0.1), &p, &Seed::new(0));
        assert!(e.is_err());
    }
}
