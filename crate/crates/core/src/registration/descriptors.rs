//! Gradient-orientation histogram descriptors on a regular cell grid.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{clamp_index, gaussian_blur, FeatureMap, Image, Raster};

const ZERO_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescriptorConfig {
    /// Descriptor cell size in pixels; also the default grid spacing.
    pub cell_size: usize,
    /// Spacing between cell centers; 0 means `cell_size`.
    pub stride: usize,
    /// Side of the square window pooled around each cell center; 0 means
    /// twice the cell size.
    pub support: usize,
    /// Orientation bins over `[0, pi)`. Descriptor length is `4 * bins`.
    pub bins: usize,
    /// Gaussian pre-smoothing before differentiation.
    pub smoothing: f64,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            cell_size: 8,
            stride: 0,
            support: 0,
            bins: 8,
            smoothing: 2.0,
        }
    }
}

impl DescriptorConfig {
    pub fn dim(&self) -> usize {
        4 * self.bins
    }

    fn stride(&self) -> usize {
        if self.stride == 0 {
            self.cell_size
        } else {
            self.stride
        }
    }

    fn support(&self) -> usize {
        if self.support == 0 {
            2 * self.cell_size
        } else {
            self.support
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorGrid {
    pub grid_h: usize,
    pub grid_w: usize,
    pub dim: usize,
    /// Row-major, one unit-length descriptor per cell.
    pub descriptors: Vec<Vec<f64>>,
    /// `(x, y)` pixel-center coordinates.
    pub cell_centers: Vec<(f64, f64)>,
    /// Cells whose histogram was (numerically) empty.
    pub degenerate: Vec<bool>,
}

impl DescriptorGrid {
    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.degenerate.iter().filter(|d| !**d).count()
    }
}

/// Smoothed central-difference gradients of the gray image, replicated borders.
pub fn gradients(image: &Image, smoothing: f64) -> (FeatureMap, FeatureMap) {
    let gray = gaussian_blur(&image.to_gray().to_feature_map(), smoothing);
    let (h, w) = gray.dims();
    let at = |y: isize, x: isize| gray.at(clamp_index(y, h), clamp_index(x, w), 0);
    let gx = FeatureMap::from_fn(h, w, 1, |y, x, _| {
        0.5 * (at(y as isize, x as isize + 1) - at(y as isize, x as isize - 1))
    });
    let gy = FeatureMap::from_fn(h, w, 1, |y, x, _| {
        0.5 * (at(y as isize + 1, x as isize) - at(y as isize - 1, x as isize))
    });
    (gx, gy)
}

/// Gradient magnitude map used for dense comparisons across modalities.
pub fn gradient_magnitude(image: &Image, smoothing: f64) -> FeatureMap {
    let (gx, gy) = gradients(image, smoothing);
    gx.zip_with(&gy, f64::hypot).expect("same shape")
}

/// Shorthand for [`extract_descriptors_with`] with `bins = dim / 4`.
pub fn extract_descriptors(image: &Image, cell_size: usize, dim: usize) -> Result<DescriptorGrid> {
    if dim == 0 || dim % 4 != 0 {
        return Err(Error::DimMismatch(format!("descriptor dim {dim} must be a positive multiple of 4")));
    }
    extract_descriptors_with(
        image,
        &DescriptorConfig {
            cell_size,
            bins: dim / 4,
            ..DescriptorConfig::default()
        },
    )
}

/// Each cell pools gradient magnitude into `bins` unsigned orientation bins
/// (centers at `k * pi / bins`, linear soft assignment) for each quadrant
/// of its window, then L2-normalizes. An empty histogram becomes the
/// uniform unit vector and the cell is marked degenerate.
pub fn extract_descriptors_with(image: &Image, cfg: &DescriptorConfig) -> Result<DescriptorGrid> {
    let cs = cfg.cell_size;
    if cs < 4 {
        return Err(Error::InvalidParameter(format!("cell size {cs} is below 4")));
    }
    if cfg.bins == 0 {
        return Err(Error::InvalidParameter("descriptor needs at least one bin".into()));
    }
    let (h, w) = image.dims();
    if h < cs || w < cs {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            cell_size: cs,
        });
    }
    let (gx, gy) = gradients(image, cfg.smoothing);
    let bins = cfg.bins;
    let dim = cfg.dim();
    let stride = cfg.stride();
    let grid_h = (h - cs) / stride + 1;
    let grid_w = (w - cs) / stride + 1;
    let oy = (h - cs - (grid_h - 1) * stride) / 2;
    let ox = (w - cs - (grid_w - 1) * stride) / 2;
    let half = cfg.support() as f64 / 2.0;
    let bin_width = PI / bins as f64;

    let mut descriptors = Vec::with_capacity(grid_h * grid_w);
    let mut centers = Vec::with_capacity(grid_h * grid_w);
    let mut degenerate = Vec::with_capacity(grid_h * grid_w);
    for gyi in 0..grid_h {
        for gxi in 0..grid_w {
            let cx = (ox + gxi * stride) as f64 + (cs as f64 - 1.0) / 2.0;
            let cy = (oy + gyi * stride) as f64 + (cs as f64 - 1.0) / 2.0;
            let x_lo = (cx - half).ceil().max(0.0) as usize;
            let x_hi = ((cx + half).floor() as usize).min(w - 1);
            let y_lo = (cy - half).ceil().max(0.0) as usize;
            let y_hi = ((cy + half).floor() as usize).min(h - 1);
            let mut hist = vec![0.0; dim];
            for y in y_lo..=y_hi {
                for x in x_lo..=x_hi {
                    let (dx, dy) = (gx.at(y, x, 0), gy.at(y, x, 0));
                    let mag = dx.hypot(dy);
                    if mag == 0.0 {
                        continue;
                    }
                    let ori = dy.atan2(dx).rem_euclid(PI);
                    let pos = ori / bin_width;
                    let lower = pos.floor();
                    let frac = pos - lower;
                    let b0 = (lower as usize) % bins;
                    let b1 = (b0 + 1) % bins;
                    let quadrant = usize::from(y as f64 >= cy) * 2 + usize::from(x as f64 >= cx);
                    hist[quadrant * bins + b0] += mag * (1.0 - frac);
                    hist[quadrant * bins + b1] += mag * frac;
                }
            }
            let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < ZERO_GUARD {
                hist.iter_mut().for_each(|v| *v = 1.0 / (dim as f64).sqrt());
                degenerate.push(true);
            } else {
                hist.iter_mut().for_each(|v| *v /= norm);
                degenerate.push(false);
            }
            descriptors.push(hist);
            centers.push((cx, cy));
        }
    }
    Ok(DescriptorGrid {
        grid_h,
        grid_w,
        dim,
        descriptors,
        cell_centers: centers,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Seed;

    #[test]
    fn constant_image_is_degenerate_uniform() {
        let g = extract_descriptors(&Image::filled(32, 32, 1, 0.3), 8, 32).unwrap();
        assert_eq!((g.grid_h, g.grid_w, g.dim), (4, 4, 32));
        assert!(g.degenerate.iter().all(|&d| d));
        let u = 1.0 / 32f64.sqrt();
        assert!(g.descriptors.iter().flatten().all(|&v| (v - u).abs() < 1e-15));
    }

    #[test]
    fn unit_norm_and_deterministic() {
        let mut rng = Seed::new(1).rng();
        let img = Image::from_fn(40, 48, 3, |_, _, _| rng.next_f64());
        let a = extract_descriptors(&img, 8, 32).unwrap();
        let b = extract_descriptors(&img.clone(), 8, 32).unwrap();
        assert_eq!(a, b);
        for d in &a.descriptors {
            let n: f64 = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn diagonal_ramp_peaks_at_45_degrees() {
        // Gradient points along (1, 1): orientation 45 degrees = bin 2 of 8.
        let img = Image::from_fn(32, 32, 1, |y, x, _| (x + y) as f64 / 62.0);
        let g = extract_descriptors(&img, 8, 32).unwrap();
        let d = &g.descriptors[5];
        for q in 0..4 {
            let block = &d[q * 8..q * 8 + 8];
            let best = (0..8).max_by(|&i, &j| block[i].partial_cmp(&block[j]).unwrap()).unwrap();
            assert_eq!(best, 2);
        }
    }

    #[test]
    fn stride_controls_spacing() {
        let img = Image::from_fn(32, 40, 1, |y, x, _| ((x * x + 3 * y) % 7) as f64 / 7.0);
        let cfg = DescriptorConfig {
            stride: 2,
            ..Default::default()
        };
        let g = extract_descriptors_with(&img, &cfg).unwrap();
        assert_eq!((g.grid_h, g.grid_w), (13, 17));
        assert_eq!(g.cell_centers[0], (3.5, 3.5));
        assert_eq!(g.cell_centers[1], (5.5, 3.5));
        let coarse = extract_descriptors(&img, 8, 32).unwrap();
        assert_eq!((coarse.grid_h, coarse.grid_w), (4, 5));
    }

    #[test]
    fn too_small() {
        assert!(matches!(
            extract_descriptors(&Image::zeros(6, 20, 1), 8, 32),
            Err(Error::ImageTooSmall { .. })
        ));
        assert!(extract_descriptors(&Image::zeros(16, 16, 1), 3, 32).is_err());
    }
}
