//! Contrast-limited adaptive histogram equalization.

use serde::{Deserialize, Serialize};

use crate::image::{Image, Raster};

const BINS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClaheParams {
    /// Tile grid `(rows, cols)`; clamped to the image size.
    pub tiles: (usize, usize),
    /// Histogram clip relative to a flat histogram; `<= 0` disables clipping.
    pub clip_limit: f64,
}

impl Default for ClaheParams {
    fn default() -> Self {
        Self {
            tiles: (8, 8),
            clip_limit: 2.0,
        }
    }
}

fn bin_of(v: f64) -> usize {
    ((v * 255.0).round() as usize).min(BINS - 1)
}

fn clip_histogram(hist: &mut [u64; BINS], limit: u64) {
    let mut excess = 0u64;
    for h in hist.iter_mut() {
        if *h > limit {
            excess += *h - limit;
            *h = limit;
        }
    }
    let batch = excess / BINS as u64;
    let residual = (excess - batch * BINS as u64) as usize;
    for h in hist.iter_mut() {
        *h += batch;
    }
    if residual > 0 {
        let step = (BINS / residual).max(1);
        for i in (0..BINS).step_by(step).take(residual) {
            hist[i] += 1;
        }
    }
}

fn tile_lut(values: impl Iterator<Item = usize>, count: u64, clip_limit: f64) -> [f64; BINS] {
    let mut hist = [0u64; BINS];
    for b in values {
        hist[b] += 1;
    }
    if clip_limit > 0.0 {
        let limit = ((clip_limit * count as f64 / BINS as f64) as u64).max(1);
        clip_histogram(&mut hist, limit);
    }
    let mut lut = [0.0; BINS];
    let mut acc = 0u64;
    for (l, h) in lut.iter_mut().zip(hist.iter()) {
        acc += h;
        *l = (acc as f64 / count as f64).min(1.0);
    }
    lut
}

fn bounds(n: usize, tiles: usize) -> Vec<usize> {
    (0..=tiles).map(|i| i * n / tiles).collect()
}

/// Equalizes one channel. Intensities are binned to 256 levels; each tile's
/// lookup table is its (clipped) cumulative histogram divided by the tile
/// pixel count, and pixels blend the four nearest tile tables bilinearly.
pub fn clahe_channel(channel: &Image, params: &ClaheParams) -> Image {
    let (h, w) = channel.dims();
    if h == 0 || w == 0 {
        return channel.clone();
    }
    let ty = params.tiles.0.clamp(1, h);
    let tx = params.tiles.1.clamp(1, w);
    let yb = bounds(h, ty);
    let xb = bounds(w, tx);
    let bins: Vec<usize> = channel.data().iter().map(|&v| bin_of(v)).collect();
    let mut luts = Vec::with_capacity(ty * tx);
    for i in 0..ty {
        for j in 0..tx {
            let count = ((yb[i + 1] - yb[i]) * (xb[j + 1] - xb[j])) as u64;
            let it = (yb[i]..yb[i + 1]).flat_map(|y| (xb[j]..xb[j + 1]).map(move |x| (y, x)));
            luts.push(tile_lut(it.map(|(y, x)| bins[y * w + x]), count, params.clip_limit));
        }
    }
    let tile_h = h as f64 / ty as f64;
    let tile_w = w as f64 / tx as f64;
    let locate = |p: usize, size: f64, n: usize| -> (usize, usize, f64) {
        let f = (p as f64 + 0.5) / size - 0.5;
        if f <= 0.0 {
            return (0, 0, 0.0);
        }
        let i0 = (f.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, if i1 == i0 { 0.0 } else { f - i0 as f64 })
    };
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let (i0, i1, wy) = locate(y, tile_h, ty);
        for x in 0..w {
            let (j0, j1, wx) = locate(x, tile_w, tx);
            let b = bins[y * w + x];
            let top = (1.0 - wx) * luts[i0 * tx + j0][b] + wx * luts[i0 * tx + j1][b];
            let bot = (1.0 - wx) * luts[i1 * tx + j0][b] + wx * luts[i1 * tx + j1][b];
            out.push((1.0 - wy) * top + wy * bot);
        }
    }
    Image::from_clamped(h, w, 1, out)
}

/// Applies [`clahe_channel`] to every channel independently.
pub fn clahe(image: &Image, params: &ClaheParams) -> Image {
    if image.channels() == 1 {
        return clahe_channel(image, params);
    }
    let planes: Vec<Image> = (0..image.channels())
        .map(|c| clahe_channel(&image.channel(c), params))
        .collect();
    Image::from_planes(&planes).expect("planes share a shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Seed;

    #[test]
    fn constant_stays_constant() {
        let img = Image::filled(32, 32, 1, 0.4);
        let out = clahe(&img, &ClaheParams::default());
        let first = out.at(0, 0, 0);
        assert!(out.data().iter().all(|&v| (v - first).abs() <= 1.0 / 255.0));
    }

    #[test]
    fn two_level_halves_hit_cdf_positions() {
        let img = Image::from_fn(8, 8, 1, |_, x, _| if x < 4 { 0.25 } else { 0.75 });
        let out = clahe(
            &img,
            &ClaheParams {
                tiles: (1, 1),
                clip_limit: 0.0,
            },
        );
        for y in 0..8 {
            for x in 0..8 {
                let want = if x < 4 { 0.5 } else { 1.0 };
                assert_eq!(out.at(y, x, 0), want);
            }
        }
    }

    #[test]
    fn output_in_range_and_monotone_per_tile_grid() {
        let mut rng = Seed::new(1).rng();
        let img = Image::from_fn(40, 50, 3, |_, _, _| rng.next_f64());
        let out = clahe(&img, &ClaheParams::default());
        assert!(out.is_valid());
        assert_eq!(out.dims(), img.dims());
    }

    #[test]
    fn clipping_conserves_mass() {
        let mut hist = [0u64; BINS];
        hist[10] = 1000;
        hist[20] = 24;
        clip_histogram(&mut hist, 16);
        assert_eq!(hist.iter().sum::<u64>(), 1024);
        assert!(hist[10] < 1000);
    }

    #[test]
    fn single_pixel_image() {
        let img = Image::filled(1, 1, 1, 0.3);
        assert_eq!(clahe(&img, &ClaheParams::default()).at(0, 0, 0), 1.0);
    }
}
