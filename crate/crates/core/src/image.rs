//! Row-major float rasters.
//!
//! [`Image`] holds intensities in `[0, 1]` with 1 or 3 channels. [`FeatureMap`]
//! holds unbounded finite values with any channel count. Pixel `(y, x)`
//! channel `c` lives at index `(y * width + x) * channels + c`. Pixel centers
//! sit at integer coordinates; `x` grows rightward and `y` downward.

use crate::error::{Error, Result};

/// Shared accessors for [`Image`] and [`FeatureMap`].
pub trait Raster: Sized {
    fn height(&self) -> usize;
    fn width(&self) -> usize;
    fn channels(&self) -> usize;
    fn data(&self) -> &[f64];
    /// Rebuilds a raster of the same kind from raw parts. Implementations may
    /// clamp to their value invariant.
    fn from_raw(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Self;

    #[inline]
    fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width() + x) * self.channels() + c
    }

    #[inline]
    fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data()[self.index(y, x, c)]
    }

    fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let i = self.index(y, x, 0);
        &self.data()[i..i + self.channels()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    /// Validated constructor: length must match and every value must be a
    /// finite number in `[0, 1]`.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidParameter(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "data length {} != {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange(format!("pixel value {v}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image, clamping every value into `[0, 1]` (NaN becomes 0).
    pub fn from_clamped(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), height * width * channels, "raster length");
        let data = data.into_iter().map(clamp01).collect();
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self::from_clamped(height, width, channels, vec![value; height * width * channels])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::from_clamped(height, width, channels, data)
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = self.index(y, x, c);
        self.data[i] = clamp01(v);
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Single channel `c` as a 1-channel image.
    pub fn channel(&self, c: usize) -> Image {
        assert!(c < self.channels);
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    /// Channel mean as a 1-channel image.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let n = self.channels as f64;
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum::<f64>() / n)
            .collect();
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    /// Interleaves 1-channel planes into one image.
    pub fn from_planes(planes: &[Image]) -> Result<Image> {
        let first = planes
            .first()
            .ok_or_else(|| Error::EmptyInput("no planes".into()))?;
        if planes.iter().any(|p| p.channels != 1 || p.dims() != first.dims()) {
            return Err(Error::ShapeMismatch("planes must be 1-channel and equal size".into()));
        }
        let n = first.height * first.width;
        let mut data = Vec::with_capacity(n * planes.len());
        for i in 0..n {
            for p in planes {
                data.push(p.data[i]);
            }
        }
        Image::new(first.height, first.width, planes.len(), data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image::from_clamped(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn channel_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.channels];
        for px in self.data.chunks_exact(self.channels) {
            for (s, v) in sums.iter_mut().zip(px) {
                *s += v;
            }
        }
        let n = (self.height * self.width).max(1) as f64;
        sums.into_iter().map(|s| s / n).collect()
    }

    pub fn to_feature_map(&self) -> FeatureMap {
        FeatureMap {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.clone(),
        }
    }

    /// True when every value is finite and inside `[0, 1]`.
    pub fn is_valid(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

impl Raster for Image {
    fn height(&self) -> usize {
        self.height
    }
    fn width(&self) -> usize {
        self.width
    }
    fn channels(&self) -> usize {
        self.channels
    }
    fn data(&self) -> &[f64] {
        &self.data
    }
    fn from_raw(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Self {
        Image::from_clamped(height, width, channels, data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "data length {} != {height}x{width}x{channels}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("feature map contains non-finite values".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn zip_with(&self, other: &FeatureMap, f: impl Fn(f64, f64) -> f64) -> Result<FeatureMap> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )));
        }
        Ok(FeatureMap {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FeatureMap {
        FeatureMap {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Channel mean as a 1-channel map.
    pub fn channel_mean(&self) -> FeatureMap {
        let n = self.channels as f64;
        FeatureMap {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self
                .data
                .chunks_exact(self.channels)
                .map(|px| px.iter().sum::<f64>() / n)
                .collect(),
        }
    }

    /// Tokens as rows: `N = height * width` rows of `channels` values.
    pub fn to_tokens(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.height * self.width, self.channels, &self.data)
    }

    pub fn from_tokens(height: usize, width: usize, tokens: &nalgebra::DMatrix<f64>) -> Result<FeatureMap> {
        if tokens.nrows() != height * width {
            return Err(Error::DimMismatch(format!(
                "{} tokens for a {height}x{width} map",
                tokens.nrows()
            )));
        }
        let c = tokens.ncols();
        let mut data = Vec::with_capacity(tokens.len());
        for r in 0..tokens.nrows() {
            for k in 0..c {
                data.push(tokens[(r, k)]);
            }
        }
        FeatureMap::new(height, width, c, data)
    }

    /// Clamps into an [`Image`]; requires 1 or 3 channels.
    pub fn to_image_clamped(&self) -> Result<Image> {
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::ChannelMismatch {
                expected: 3,
                found: self.channels,
            });
        }
        Ok(Image::from_clamped(self.height, self.width, self.channels, self.data.clone()))
    }
}

impl Raster for FeatureMap {
    fn height(&self) -> usize {
        self.height
    }
    fn width(&self) -> usize {
        self.width
    }
    fn channels(&self) -> usize {
        self.channels
    }
    fn data(&self) -> &[f64] {
        &self.data
    }
    fn from_raw(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Self {
        FeatureMap {
            height,
            width,
            channels,
            data,
        }
    }
}

#[inline]
pub fn clamp01(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Mirror index into `[0, n)` without repeating the edge sample
/// (`-1 -> 1`, `n -> n - 2`).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Clamp index into `[0, n)`.
pub fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Separable convolution of every channel with a symmetric 1-D kernel, using
/// edge replication at the borders.
pub fn separable_filter<R: Raster>(src: &R, kernel: &[f64]) -> R {
    let (h, w, ch) = (src.height(), src.width(), src.channels());
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w * ch];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    let xx = clamp_index(x as isize + k as isize - r, w);
                    acc += kv * src.at(y, xx, c);
                }
                tmp[(y * w + x) * ch + c] = acc;
            }
        }
    }
    let mut out = vec![0.0; h * w * ch];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    let yy = clamp_index(y as isize + k as isize - r, h);
                    acc += kv * tmp[(yy * w + x) * ch + c];
                }
                out[(y * w + x) * ch + c] = acc;
            }
        }
    }
    R::from_raw(h, w, ch, out)
}

/// Normalized sampled Gaussian with the given radius.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

pub fn gaussian_blur<R: Raster>(src: &R, sigma: f64) -> R {
    if sigma <= 0.0 {
        return R::from_raw(src.height(), src.width(), src.channels(), src.data().to_vec());
    }
    let radius = (3.0 * sigma).ceil() as usize;
    separable_filter(src, &gaussian_kernel(sigma, radius))
}

/// Bilinear sample of channel `c` at continuous `(x, y)`. Neighbours outside
/// the frame contribute zero, so the weights are
/// `max(0, 1 - |x' - x|) * max(0, 1 - |y' - y|)` over in-frame pixels.
/// Coordinates within 1e-9 of an integer snap to it, which keeps integer
/// shifts exact.
pub fn bilinear_sample<R: Raster>(src: &R, x: f64, y: f64, c: usize) -> f64 {
    let x = snap(x);
    let y = snap(y);
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as isize, y0 as isize);
    let (h, w) = (src.height() as isize, src.width() as isize);
    let mut acc = 0.0;
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        if wy == 0.0 {
            continue;
        }
        let yy = y0 + dy;
        if yy < 0 || yy >= h {
            continue;
        }
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            if wx == 0.0 {
                continue;
            }
            let xx = x0 + dx;
            if xx < 0 || xx >= w {
                continue;
            }
            acc += wx * wy * src.at(yy as usize, xx as usize, c);
        }
    }
    acc
}

/// Bilinear sample with edge replication instead of zero fill.
pub fn bilinear_sample_clamped<R: Raster>(src: &R, x: f64, y: f64, c: usize) -> f64 {
    let xm = (src.width() - 1) as f64;
    let ym = (src.height() - 1) as f64;
    bilinear_sample(src, x.clamp(0.0, xm), y.clamp(0.0, ym), c)
}

#[inline]
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Resizes with bilinear sampling at pixel-center aligned positions.
pub fn resize<R: Raster>(src: &R, height: usize, width: usize) -> R {
    if (height, width) == src.dims() {
        return R::from_raw(height, width, src.channels(), src.data().to_vec());
    }
    let sy = src.height() as f64 / height as f64;
    let sx = src.width() as f64 / width as f64;
    let ch = src.channels();
    let mut data = Vec::with_capacity(height * width * ch);
    for y in 0..height {
        let fy = (y as f64 + 0.5) * sy - 0.5;
        for x in 0..width {
            let fx = (x as f64 + 0.5) * sx - 0.5;
            for c in 0..ch {
                data.push(bilinear_sample_clamped(src, fx, fy, c));
            }
        }
    }
    R::from_raw(height, width, ch, data)
}
