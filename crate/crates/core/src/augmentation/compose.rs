//! Small-sample strategies that rearrange whole samples or box regions:
//! four-way mosaics, grid stitching, region copy-paste and magnification of
//! small objects.

use crate::detection::LabeledBox;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::image::{bilinear_sample_clamped, resize, Image, Raster};
use crate::rng::Seed;
use crate::sample::{PairedSample, SampleMeta};

fn check_registered(s: &PairedSample) -> Result<()> {
    if s.rgb.dims() != s.tir.dims() {
        return Err(Error::ShapeMismatch("composition needs registered pairs".into()));
    }
    Ok(())
}

fn paste(dst: &mut Image, src: &Image, y0: usize, x0: usize) {
    let ch = dst.channels();
    for y in 0..src.height() {
        for x in 0..src.width() {
            for c in 0..ch {
                dst.set(y0 + y, x0 + x, c, src.at(y, x, c));
            }
        }
    }
}

/// Tiles samples into the cells bounded by `x_edges` x `y_edges`
/// (row-major), resizing each sample to its cell and remapping its boxes.
fn tile(samples: &[PairedSample], y_edges: &[usize], x_edges: &[usize]) -> Result<PairedSample> {
    let rows = y_edges.len() - 1;
    let cols = x_edges.len() - 1;
    let (h, w) = (y_edges[rows], x_edges[cols]);
    let mut rgb = Image::zeros(h, w, 3);
    let mut tir = Image::zeros(h, w, 1);
    let mut boxes = Vec::new();
    for (k, s) in samples.iter().enumerate() {
        check_registered(s)?;
        let (r, c) = (k / cols, k % cols);
        let (y0, x0) = (y_edges[r], x_edges[c]);
        let ch = y_edges[r + 1] - y0;
        let cw = x_edges[c + 1] - x0;
        if ch == 0 || cw == 0 {
            continue;
        }
        paste(&mut rgb, &resize(&s.rgb, ch, cw), y0, x0);
        paste(&mut tir, &resize(&s.tir, ch, cw), y0, x0);
        let sy = ch as f64 / s.rgb.height() as f64;
        let sx = cw as f64 / s.rgb.width() as f64;
        for b in &s.boxes {
            let nb = BBox::new(
                b.bbox.x1 * sx + x0 as f64,
                b.bbox.y1 * sy + y0 as f64,
                b.bbox.x2 * sx + x0 as f64,
                b.bbox.y2 * sy + y0 as f64,
            )
            .clip(w as f64, h as f64);
            if nb.area() >= 1.0 {
                boxes.push(LabeledBox::new(nb, b.class_id));
            }
        }
    }
    Ok(PairedSample {
        rgb,
        tir,
        boxes,
        meta: SampleMeta::default(),
    })
}

fn even_edges(n: usize, parts: usize) -> Vec<usize> {
    (0..=parts).map(|i| i * n / parts).collect()
}

/// Places four samples in the quadrants of an `out_h x out_w` canvas. The
/// split point sits at the center, moved by up to `jitter * size / 2` in
/// each axis.
pub fn mosaic4(samples: &[PairedSample], out_h: usize, out_w: usize, jitter: f64, seed: &Seed) -> Result<PairedSample> {
    if samples.len() != 4 {
        return Err(Error::GridMismatch {
            rows: 2,
            cols: 2,
            samples: samples.len(),
        });
    }
    if out_h < 2 || out_w < 2 {
        return Err(Error::InvalidParameter("mosaic canvas must be at least 2x2".into()));
    }
    let mut rng = seed.rng();
    let mut split = |n: usize| -> usize {
        let base = n / 2;
        if jitter <= 0.0 {
            return base;
        }
        let off = rng.uniform(-0.5, 0.5) * jitter * n as f64;
        ((base as f64 + off).round() as usize).clamp(1, n - 1)
    };
    let yc = split(out_h);
    let xc = split(out_w);
    tile(samples, &[0, yc, out_h], &[0, xc, out_w])
}

/// Tiles `rows * cols` samples row-major onto an `out_h x out_w` canvas.
pub fn stitcher(samples: &[PairedSample], grid: (usize, usize), out_h: usize, out_w: usize) -> Result<PairedSample> {
    let (rows, cols) = grid;
    if rows == 0 || cols == 0 || rows * cols != samples.len() {
        return Err(Error::GridMismatch {
            rows,
            cols,
            samples: samples.len(),
        });
    }
    tile(samples, &even_edges(out_h, rows), &even_edges(out_w, cols))
}

/// Integer pixel rectangle `(x0, y0, x1, y1)` covering a box, clipped.
fn pixel_rect(b: &BBox, w: usize, h: usize) -> (usize, usize, usize, usize) {
    let x0 = b.x1.floor().max(0.0) as usize;
    let y0 = b.y1.floor().max(0.0) as usize;
    let x1 = (b.x2.ceil() as usize).min(w);
    let y1 = (b.y2.ceil() as usize).min(h);
    (x0, y0, x1.max(x0), y1.max(y0))
}

const PLACEMENT_ATTEMPTS: usize = 50;

/// Copies ground-truth regions (both modalities) to random locations that
/// overlap no existing box. Each copy picks a source box uniformly and
/// tries up to 50 integer offsets; a copy that finds no free spot is skipped.
pub fn region_resample(sample: &PairedSample, copies: usize, seed: &Seed) -> Result<PairedSample> {
    check_registered(sample)?;
    if copies == 0 || sample.boxes.is_empty() {
        return Ok(sample.clone());
    }
    let (h, w) = sample.dims();
    let mut out = sample.clone();
    let mut rng = seed.rng();
    for _ in 0..copies {
        let src_box = sample.boxes[rng.below(sample.boxes.len() as u64) as usize];
        let (x0, y0, x1, y1) = pixel_rect(&src_box.bbox, w, h);
        let (pw, ph) = (x1 - x0, y1 - y0);
        if pw == 0 || ph == 0 || pw > w || ph > h {
            continue;
        }
        for _ in 0..PLACEMENT_ATTEMPTS {
            let nx = rng.below((w - pw + 1) as u64) as usize;
            let ny = rng.below((h - ph + 1) as u64) as usize;
            let rect = BBox::new(nx as f64, ny as f64, (nx + pw) as f64, (ny + ph) as f64);
            if out.boxes.iter().any(|b| b.bbox.intersection(&rect) > 0.0) {
                continue;
            }
            for y in 0..ph {
                for x in 0..pw {
                    for c in 0..3 {
                        out.rgb.set(ny + y, nx + x, c, sample.rgb.at(y0 + y, x0 + x, c));
                    }
                    out.tir.set(ny + y, nx + x, 0, sample.tir.at(y0 + y, x0 + x, 0));
                }
            }
            let dx = nx as f64 - x0 as f64;
            let dy = ny as f64 - y0 as f64;
            let moved = src_box.bbox.translate(dx, dy).clip(w as f64, h as f64);
            out.boxes.push(LabeledBox::new(moved, src_box.class_id));
            break;
        }
    }
    Ok(out)
}

/// Re-renders every box smaller than `area_threshold` scaled by `factor`
/// about its center (both modalities), clipping to the frame. Pixels are
/// read from the unmodified input.
pub fn small_object_magnify(sample: &PairedSample, area_threshold: f64, factor: f64) -> Result<PairedSample> {
    check_registered(sample)?;
    if !(factor > 1.0) {
        return Err(Error::InvalidParameter("magnification factor must be > 1".into()));
    }
    let (h, w) = sample.dims();
    let mut out = sample.clone();
    for (i, b) in sample.boxes.iter().enumerate() {
        if b.bbox.area() >= area_threshold {
            continue;
        }
        let (cx, cy) = b.bbox.center();
        let hw = 0.5 * b.bbox.width() * factor;
        let hh = 0.5 * b.bbox.height() * factor;
        let nb = BBox::new(cx - hw, cy - hh, cx + hw, cy + hh).clip(w as f64, h as f64);
        let (x0, y0, x1, y1) = pixel_rect(&nb, w, h);
        for y in y0..y1 {
            for x in x0..x1 {
                // Pixel centers in box coordinates sit at +0.5.
                let px = x as f64 + 0.5;
                let py = y as f64 + 0.5;
                if px < nb.x1 || px > nb.x2 || py < nb.y1 || py > nb.y2 {
                    continue;
                }
                let sx = cx + (px - cx) / factor - 0.5;
                let sy = cy + (py - cy) / factor - 0.5;
                for c in 0..3 {
                    out.rgb.set(y, x, c, bilinear_sample_clamped(&sample.rgb, sx, sy, c));
                }
                out.tir.set(y, x, 0, bilinear_sample_clamped(&sample.tir, sx, sy, 0));
            }
        }
        out.boxes[i] = LabeledBox::new(nb, b.class_id);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_with_box(h: usize, w: usize, b: BBox, seed: u64) -> PairedSample {
        let mut rng = Seed::new(seed).rng();
        let rgb = Image::from_fn(h, w, 3, |_, _, _| rng.next_f64());
        let tir = Image::from_fn(h, w, 1, |_, _, _| rng.next_f64());
        PairedSample::new(rgb, tir, vec![LabeledBox::new(b, 0)]).unwrap()
    }

    fn centered(h: usize, w: usize, seed: u64) -> PairedSample {
        let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
        sample_with_box(h, w, BBox::new(cx - 4.0, cy - 4.0, cx + 4.0, cy + 4.0), seed)
    }

    #[test]
    fn mosaic_one_box_per_quadrant() {
        let samples: Vec<_> = (0..4).map(|i| centered(32, 32, i)).collect();
        let out = mosaic4(&samples, 32, 32, 0.0, &Seed::new(0)).unwrap();
        assert_eq!(out.boxes.len(), 4);
        let expected = [(8.0, 8.0), (24.0, 8.0), (8.0, 24.0), (24.0, 24.0)];
        for (b, (cx, cy)) in out.boxes.iter().zip(expected) {
            assert_eq!(b.bbox.center(), (cx, cy));
            assert_eq!(b.bbox.width(), 4.0);
        }
    }

    #[test]
    fn mosaic_black_and_deterministic() {
        let black = PairedSample::new(Image::zeros(16, 16, 3), Image::zeros(16, 16, 1), vec![]).unwrap();
        let samples = vec![black.clone(), black.clone(), black.clone(), black];
        let out = mosaic4(&samples, 20, 24, 0.5, &Seed::new(3)).unwrap();
        assert!(out.rgb.data().iter().all(|&v| v == 0.0));
        let samples: Vec<_> = (0..4).map(|i| centered(16, 16, i)).collect();
        let a = mosaic4(&samples, 20, 24, 0.5, &Seed::new(3)).unwrap();
        let b = mosaic4(&samples, 20, 24, 0.5, &Seed::new(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stitcher_cases() {
        let s = centered(12, 10, 1);
        let one = stitcher(std::slice::from_ref(&s), (1, 1), 12, 10).unwrap();
        assert_eq!(one.rgb, s.rgb);
        assert_eq!(one.boxes, s.boxes);

        let samples: Vec<_> = (0..4).map(|i| centered(20, 20, 10 + i)).collect();
        let st = stitcher(&samples, (2, 2), 30, 26).unwrap();
        let mo = mosaic4(&samples, 30, 26, 0.0, &Seed::new(0)).unwrap();
        assert_eq!(st, mo);
        assert_eq!(st.boxes.len(), 4);

        assert!(matches!(stitcher(&samples, (3, 2), 30, 30), Err(Error::GridMismatch { .. })));
        let six: Vec<_> = (0..6).map(|i| centered(20, 20, i)).collect();
        assert_eq!(stitcher(&six, (2, 3), 40, 60).unwrap().boxes.len(), 6);
    }

    #[test]
    fn region_resample_copies() {
        let s = sample_with_box(40, 40, BBox::new(2.0, 2.0, 8.0, 7.0), 2);
        assert_eq!(region_resample(&s, 0, &Seed::new(1)).unwrap(), s);
        let out = region_resample(&s, 2, &Seed::new(1)).unwrap();
        assert_eq!(out.boxes.len(), 3);
        for nb in &out.boxes[1..] {
            let (dx, dy) = (nb.bbox.x1 - 2.0, nb.bbox.y1 - 2.0);
            for y in 2..7 {
                for x in 2..8 {
                    let (ty, tx) = ((y as f64 + dy) as usize, (x as f64 + dx) as usize);
                    assert_eq!(out.rgb.pixel(ty, tx), s.rgb.pixel(y, x));
                    assert_eq!(out.tir.at(ty, tx, 0), s.tir.at(y, x, 0));
                }
            }
        }
        // pasted regions do not overlap each other or the source
        for i in 0..3 {
            for j in i + 1..3 {
                assert_eq!(out.boxes[i].bbox.intersection(&out.boxes[j].bbox), 0.0);
            }
        }
    }

    #[test]
    fn magnify_cases() {
        let s = sample_with_box(32, 32, BBox::new(10.0, 10.0, 20.0, 20.0), 3);
        assert_eq!(small_object_magnify(&s, 50.0, 2.0).unwrap(), s);

        let s = sample_with_box(32, 32, BBox::new(10.0, 12.0, 14.0, 16.0), 3);
        let out = small_object_magnify(&s, 20.0, 2.0).unwrap();
        assert_eq!(out.boxes[0].bbox, BBox::new(8.0, 10.0, 16.0, 18.0));
        assert!(out.check_invariants());

        let s = sample_with_box(32, 32, BBox::new(0.0, 0.0, 4.0, 4.0), 3);
        let out = small_object_magnify(&s, 20.0, 3.0).unwrap();
        assert_eq!(out.boxes[0].bbox, BBox::new(0.0, 0.0, 8.0, 8.0));
        assert!(out.check_invariants());
        assert!(small_object_magnify(&s, 20.0, 1.0).is_err());
    }
}
