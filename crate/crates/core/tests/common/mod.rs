//! Brute-force reference implementations written directly from the
//! definitions, with plain loops and no shared code paths. Shared by the
//! oracle tests and the acceptance suite.
#![allow(dead_code)]

pub mod equivalence;
pub mod invariants;

use msbench_core::feature_fusion::{Coefficient, HeadParams, IcfeParams, NinParams};
use msbench_core::pixel_fusion::ConvKernel;
use msbench_core::{BBox, Detection, FeatureMap, LabeledBox, Raster, Seed};

pub type Mat = Vec<Vec<f64>>;

pub fn random_map(h: usize, w: usize, c: usize, seed: u64) -> FeatureMap {
    let mut rng = Seed::new(seed).rng();
    FeatureMap::from_fn(h, w, c, |_, _, _| rng.uniform(-1.0, 1.0))
}

pub fn random_dmatrix(r: usize, c: usize, seed: u64) -> nalgebra::DMatrix<f64> {
    let mut rng = Seed::new(seed).rng();
    nalgebra::DMatrix::from_fn(r, c, |_, _| rng.uniform(-1.0, 1.0))
}

pub fn to_mat(m: &nalgebra::DMatrix<f64>) -> Mat {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// Token `y * W + x` holds the channel vector of pixel `(y, x)`.
pub fn tokens(map: &FeatureMap) -> Mat {
    let mut t = Vec::new();
    for y in 0..map.height() {
        for x in 0..map.width() {
            t.push((0..map.channels()).map(|c| map.at(y, x, c)).collect());
        }
    }
    t
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let n = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            (0..n)
                .map(|j| row.iter().enumerate().map(|(k, v)| v * b[k][j]).sum())
                .collect()
        })
        .collect()
}

pub fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// numpy "reflect" padding: the edge sample is not repeated.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
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
}

/// `out[y][x][co] = b[co] + sum over (ky, kx, ci)` of kernel times the
/// reflect-padded input.
pub fn conv_oracle<R: Raster>(img: &R, k: &ConvKernel, bias: &[f64; 3]) -> Vec<f64> {
    let (h, w) = img.dims();
    let size = k.size();
    let r = (size / 2) as isize;
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            for co in 0..3 {
                let mut acc = bias[co];
                for ky in 0..size {
                    for kx in 0..size {
                        for ci in 0..3 {
                            let yy = reflect(y as isize + ky as isize - r, h);
                            let xx = reflect(x as isize + kx as isize - r, w);
                            acc += k.get(ky, kx, ci, co) * img.at(yy, xx, ci);
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

/// Per-pixel `x + W x + zeta`.
pub fn nin_oracle(x: &FeatureMap, w: &nalgebra::DMatrix<f64>, zeta: &nalgebra::DVector<f64>) -> Vec<f64> {
    let c = x.channels();
    let mut out = Vec::new();
    for y in 0..x.height() {
        for xx in 0..x.width() {
            for r in 0..c {
                let mut v = x.at(y, xx, r) + zeta[r];
                for k in 0..c {
                    v += w[(r, k)] * x.at(y, xx, k);
                }
                out.push(v);
            }
        }
    }
    out
}

pub fn nin_fuse_oracle(d_r: &FeatureMap, d_t: &FeatureMap, p: &NinParams) -> Vec<f64> {
    let alpha = |d: &FeatureMap| {
        let n = (d.height() * d.width()) as f64;
        let mut logit = 0.0;
        for c in 0..d.channels() {
            let mut s = 0.0;
            for y in 0..d.height() {
                for x in 0..d.width() {
                    s += d.at(y, x, c);
                }
            }
            logit += p.nu[c] * s / n;
        }
        1.0 / (1.0 + (-logit).exp())
    };
    let (a_r, a_t) = (alpha(d_r), alpha(d_t));
    d_r.data().iter().zip(d_t.data()).map(|(r, t)| a_r * r + a_t * t).collect()
}

/// `softmax(Q K^T / sqrt(d_h)) V` with Q from `tq`, K and V from `tc`.
pub fn head_oracle(tq: &Mat, tc: &Mat, head: &HeadParams) -> Mat {
    let q = matmul(tq, &to_mat(&head.w_q));
    let k = matmul(tc, &to_mat(&head.w_k));
    let v = matmul(tc, &to_mat(&head.w_v));
    let d_h = q[0].len() as f64;
    let mut z = Vec::new();
    for qi in &q {
        let logits: Vec<f64> = k
            .iter()
            .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / d_h.sqrt())
            .collect();
        let a = softmax_row(&logits);
        let mut row = vec![0.0; v[0].len()];
        for (j, aj) in a.iter().enumerate() {
            for (c, r) in row.iter_mut().enumerate() {
                *r += aj * v[j][c];
            }
        }
        z.push(row);
    }
    z
}

pub fn multi_head_oracle(tq: &Mat, tc: &Mat, p: &IcfeParams) -> Mat {
    let per_head: Vec<Mat> = p.heads.iter().map(|h| head_oracle(tq, tc, h)).collect();
    let concat: Mat = (0..tq.len())
        .map(|i| per_head.iter().flat_map(|z| z[i].clone()).collect())
        .collect();
    matmul(&concat, &to_mat(&p.w_o))
}

fn coeff(c: &Coefficient, ch: usize) -> f64 {
    match c {
        Coefficient::Scalar(v) => *v,
        Coefficient::PerChannel(v) => v[ch],
    }
}

/// Scripted iteration: `n = 1` returns the first fused value; otherwise
/// `n - 1` attention rounds run and the last fused value `V` becomes
/// `V + tanh(V)`.
pub fn icfe_oracle(x_r: &FeatureMap, x_t: &FeatureMap, p: &IcfeParams) -> Vec<f64> {
    let mut t_r = tokens(x_r);
    let mut t_t = tokens(x_t);
    let rounds = if p.iterations == 1 { 1 } else { p.iterations - 1 };
    let mut v: Mat = Vec::new();
    for k in 0..rounds {
        let z_r = multi_head_oracle(&t_r, &t_t, p);
        let z_t = multi_head_oracle(&t_t, &t_r, p);
        let lam = &p.lambda[k.min(p.lambda.len() - 1)];
        let mu = &p.mu[k.min(p.mu.len() - 1)];
        v = z_r
            .iter()
            .zip(&z_t)
            .map(|(a, b)| {
                (0..a.len())
                    .map(|c| coeff(lam, c) * a[c] + coeff(mu, c) * b[c])
                    .collect()
            })
            .collect();
        t_r = z_r;
        t_t = z_t;
    }
    let flat: Vec<f64> = v.into_iter().flatten().collect();
    if p.iterations >= 2 {
        flat.iter().map(|x| x + x.tanh()).collect()
    } else {
        flat
    }
}

/// Depth on the key grid scales each key column's logits.
pub fn depth_attention_oracle(x_r: &FeatureMap, x_t: &FeatureMap, depth: &FeatureMap, head: &HeadParams) -> (Mat, Vec<f64>) {
    let q = matmul(&tokens(x_r), &to_mat(&head.w_q));
    let k = matmul(&tokens(x_t), &to_mat(&head.w_k));
    let v = matmul(&tokens(x_t), &to_mat(&head.w_v));
    let d: Vec<f64> = tokens(depth).into_iter().map(|t| t[0]).collect();
    let d_h = q[0].len() as f64;
    let mut att = Vec::new();
    let mut out = Vec::new();
    for qi in &q {
        let logits: Vec<f64> = k
            .iter()
            .enumerate()
            .map(|(j, kj)| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * d[j] / d_h.sqrt())
            .collect();
        let a = softmax_row(&logits);
        for c in 0..v[0].len() {
            out.push(a.iter().enumerate().map(|(j, aj)| aj * v[j][c]).sum());
        }
        att.push(a);
    }
    (att, out)
}

pub fn iou_oracle(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// All-points AP for one image and one class, enumerated over every score
/// cutoff. Scores must be distinct.
pub fn ap_oracle(preds: &[Detection], gts: &[LabeledBox], thr: f64) -> f64 {
    if gts.is_empty() {
        return if preds.is_empty() { 1.0 } else { 0.0 };
    }
    let mut order: Vec<&Detection> = preds.iter().collect();
    order.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    let mut used = vec![false; gts.len()];
    let mut tp = Vec::new();
    for p in &order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if used[g] || gt.class_id != p.class_id {
                continue;
            }
            let v = iou_oracle(&p.bbox, &gt.bbox);
            if v >= thr && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            used[g] = true;
        }
        tp.push(best.is_some());
    }
    let n = order.len();
    let precision_at = |k: usize| tp[..=k].iter().filter(|t| **t).count() as f64 / (k + 1) as f64;
    let mut ap = 0.0;
    for k in 0..n {
        if tp[k] {
            let best = (k..n).map(precision_at).fold(0.0, f64::max);
            ap += best / gts.len() as f64;
        }
    }
    ap
}
