//! Sparse depth completion and depth-modulated cross attention.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::feature_fusion::HeadParams;
use crate::image::{gaussian_kernel, resize, separable_filter, FeatureMap, Raster};

/// Fills every pixel with the value of the nearest valid sample (4-connected
/// breadth-first order, seeds in row-major order) and smooths the result
/// with a 5x5 Gaussian of sigma 1.
pub fn complete_depth(sparse: &FeatureMap, valid: &[bool]) -> Result<FeatureMap> {
    let (h, w) = sparse.dims();
    if valid.len() != h * w {
        return Err(Error::ShapeMismatch(format!("mask has {} entries for a {h}x{w} map", valid.len())));
    }
    if sparse.channels() != 1 {
        return Err(Error::ChannelMismatch {
            expected: 1,
            found: sparse.channels(),
        });
    }
    if !valid.iter().any(|&v| v) {
        return Err(Error::EmptyDepth);
    }
    let mut filled: Vec<Option<f64>> = vec![None; h * w];
    let mut queue = VecDeque::new();
    for (i, &ok) in valid.iter().enumerate() {
        if ok {
            filled[i] = Some(sparse.data()[i]);
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (y, x) = (i / w, i % w);
        let v = filled[i];
        let mut visit = |j: usize| {
            if filled[j].is_none() {
                filled[j] = v;
                queue.push_back(j);
            }
        };
        if y > 0 {
            visit(i - w);
        }
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < w {
            visit(i + 1);
        }
        if y + 1 < h {
            visit(i + w);
        }
    }
    let dense = FeatureMap::new(h, w, 1, filled.into_iter().map(|v| v.expect("reachable")).collect())?;
    Ok(separable_filter(&dense, &gaussian_kernel(1.0, 2)))
}

/// Attention from RGB queries to TIR keys whose logits are scaled per key by
/// the depth at that key: `H = softmax((Q K^T) * D_j / sqrt(d_h))`.
/// Returns `H` (queries by keys) and `H V` reshaped to the query grid. The
/// depth map is resized to the TIR grid when the sizes differ.
pub fn depth_guided_attention(
    x_rgb: &FeatureMap,
    x_tir: &FeatureMap,
    depth: &FeatureMap,
    head: &HeadParams,
) -> Result<(DMatrix<f64>, FeatureMap)> {
    let d = head.w_q.nrows();
    if x_rgb.channels() != d || x_tir.channels() != d {
        return Err(Error::DimMismatch(format!(
            "features have {} / {} channels, head expects {d}",
            x_rgb.channels(),
            x_tir.channels()
        )));
    }
    if depth.channels() != 1 {
        return Err(Error::ChannelMismatch {
            expected: 1,
            found: depth.channels(),
        });
    }
    let depth = resize(depth, x_tir.height(), x_tir.width());
    let q = x_rgb.to_tokens() * &head.w_q;
    let k = x_tir.to_tokens() * &head.w_k;
    let v = x_tir.to_tokens() * &head.w_v;
    if k.nrows() == 0 {
        return Err(Error::EmptyInput("no key tokens".into()));
    }
    let scale = 1.0 / (q.ncols().max(1) as f64).sqrt();
    let mut logits = &q * k.transpose();
    for j in 0..logits.ncols() {
        let dj = depth.data()[j];
        logits.column_mut(j).iter_mut().for_each(|s| *s *= dj * scale);
    }
    for mut row in logits.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|s| *s = (*s - max).exp());
        let sum = row.sum();
        row.iter_mut().for_each(|s| *s /= sum);
    }
    let out = &logits * v;
    let map = FeatureMap::from_tokens(x_rgb.height(), x_rgb.width(), &out)?;
    Ok((logits, map))
}
