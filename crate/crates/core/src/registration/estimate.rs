//! Least-squares and RANSAC fitting of affine maps and homographies.

use nalgebra::{DMatrix, Matrix2, Matrix3, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PlanarTransform, PointMatch, PointMatchSet, TransformKind};
use crate::rng::Seed;

/// Floor on the adaptive inlier threshold used while polishing a fit.
const POLISH_FLOOR_PX: f64 = 1e-6;
const POLISH_ROUNDS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustFitConfig {
    pub model: TransformKind,
    pub iterations: usize,
    pub inlier_px: f64,
    /// Minimum consensus size; capped at the number of matches.
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RobustFitConfig {
    fn default() -> Self {
        Self {
            model: TransformKind::Affine,
            iterations: 500,
            inlier_px: 2.0,
            min_inliers: 6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustFit {
    pub transform: PlanarTransform,
    /// Indices into the input match list, ascending.
    pub inliers: Vec<usize>,
    pub rms_residual: f64,
}

impl RobustFit {
    /// Inlier flags aligned with the input match list.
    pub fn inlier_mask(&self, n: usize) -> Vec<bool> {
        let mut mask = vec![false; n];
        for &i in &self.inliers {
            mask[i] = true;
        }
        mask
    }
}

pub fn minimal_sample_size(kind: TransformKind) -> usize {
    match kind {
        TransformKind::Affine => 3,
        TransformKind::Homography => 4,
    }
}

pub fn residual(t: &PlanarTransform, m: &PointMatch) -> f64 {
    let (x, y) = t.apply(m.p.0, m.p.1);
    (x - m.q.0).hypot(y - m.q.1)
}

fn centroid(points: impl Iterator<Item = (f64, f64)> + Clone) -> (f64, f64) {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    (sx / n, sy / n)
}

/// True when the source points span less than a (relative) sliver of area.
fn collinear(pairs: &[PointMatch]) -> bool {
    let (mx, my) = centroid(pairs.iter().map(|m| m.p));
    let mut s = Matrix2::zeros();
    for m in pairs {
        let d = Vector2::new(m.p.0 - mx, m.p.1 - my);
        s += d * d.transpose();
    }
    let tr = s.trace();
    tr <= 0.0 || s.determinant() <= 1e-10 * tr * tr
}

/// Affine least squares via the normal equations on centered source points.
pub fn fit_affine_lsq(pairs: &[PointMatch]) -> Result<PlanarTransform> {
    if pairs.len() < 3 {
        return Err(Error::InsufficientMatches {
            needed: 3,
            found: pairs.len(),
        });
    }
    if collinear(pairs) {
        return Err(Error::DegenerateConfiguration);
    }
    let (mx, my) = centroid(pairs.iter().map(|m| m.p));
    let mut ata = Matrix3::zeros();
    let mut atu = nalgebra::Vector3::zeros();
    let mut atv = nalgebra::Vector3::zeros();
    for m in pairs {
        let r = nalgebra::Vector3::new(m.p.0 - mx, m.p.1 - my, 1.0);
        ata += r * r.transpose();
        atu += r * m.q.0;
        atv += r * m.q.1;
    }
    let chol = ata.cholesky().ok_or(Error::DegenerateConfiguration)?;
    let a = chol.solve(&atu);
    let b = chol.solve(&atv);
    PlanarTransform::affine(
        [[a[0], a[1]], [b[0], b[1]]],
        [a[2] - a[0] * mx - a[1] * my, b[2] - b[0] * mx - b[1] * my],
    )
    .map_err(|_| Error::DegenerateConfiguration)
}

/// Similarity that moves the centroid to the origin and sets the mean
/// distance from it to sqrt(2).
fn normalizer(points: &[(f64, f64)]) -> Matrix3<f64> {
    let (mx, my) = centroid(points.iter().copied());
    let mean_dist = points.iter().map(|&(x, y)| (x - mx).hypot(y - my)).sum::<f64>() / points.len() as f64;
    let s = if mean_dist > 0.0 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0)
}

/// Normalized direct linear transform.
pub fn fit_homography_dlt(pairs: &[PointMatch]) -> Result<PlanarTransform> {
    if pairs.len() < 4 {
        return Err(Error::InsufficientMatches {
            needed: 4,
            found: pairs.len(),
        });
    }
    if collinear(pairs) {
        return Err(Error::DegenerateConfiguration);
    }
    let src: Vec<(f64, f64)> = pairs.iter().map(|m| m.p).collect();
    let dst: Vec<(f64, f64)> = pairs.iter().map(|m| m.q).collect();
    let t1 = normalizer(&src);
    let t2 = normalizer(&dst);
    let apply = |t: &Matrix3<f64>, (x, y): (f64, f64)| (t[(0, 0)] * x + t[(0, 2)], t[(1, 1)] * y + t[(1, 2)]);
    // Pad to at least nine rows so the thin SVD still exposes the null vector.
    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (&s, &d)) in src.iter().zip(&dst).enumerate() {
        let (x, y) = apply(&t1, s);
        let (u, v) = apply(&t2, d);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for k in 0..9 {
            a[(2 * i, k)] = r0[k];
            a[(2 * i + 1, k)] = r1[k];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::DegenerateConfiguration)?;
    let idx = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .map(|(i, _)| i)
        .ok_or(Error::DegenerateConfiguration)?;
    let h = v_t.row(idx);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t2_inv = t2.try_inverse().ok_or(Error::DegenerateConfiguration)?;
    let m = t2_inv * hn * t1;
    if m[(2, 2)].abs() < 1e-12 {
        return Err(Error::DegenerateConfiguration);
    }
    PlanarTransform::from_matrix(TransformKind::Homography, m).map_err(|_| Error::DegenerateConfiguration)
}

pub fn fit_model(kind: TransformKind, pairs: &[PointMatch]) -> Result<PlanarTransform> {
    match kind {
        TransformKind::Affine => fit_affine_lsq(pairs),
        TransformKind::Homography => fit_homography_dlt(pairs),
    }
}

fn consensus(t: &PlanarTransform, pairs: &[PointMatch], thr: f64) -> (Vec<usize>, f64) {
    let mut idx = Vec::new();
    let mut sse = 0.0;
    for (i, m) in pairs.iter().enumerate() {
        let r = residual(t, m);
        if r <= thr {
            idx.push(i);
            sse += r * r;
        }
    }
    (idx, sse)
}

fn sample_distinct(seed: &Seed, n: usize, k: usize) -> Vec<usize> {
    let mut rng = seed.rng();
    let mut out: Vec<usize> = Vec::with_capacity(k);
    while out.len() < k {
        let i = rng.below(n as u64) as usize;
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

fn subset(pairs: &[PointMatch], idx: &[usize]) -> Vec<PointMatch> {
    idx.iter().map(|&i| pairs[i]).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// RANSAC over minimal samples followed by least-squares polishing.
///
/// Hypothesis `k` samples with `Seed::new(seed).derive(k)`. The winner has
/// the most inliers, then the smaller inlier residual sum, then the lower
/// iteration index, so the result does not depend on thread scheduling.
/// Polishing refits on the consensus set and re-selects inliers with a
/// threshold of three times the median inlier residual (capped at
/// `inlier_px`) until the set stops changing.
pub fn estimate_transform(matches: &PointMatchSet, cfg: &RobustFitConfig) -> Result<RobustFit> {
    if !(cfg.inlier_px > 0.0) {
        return Err(Error::InvalidParameter("inlier_px must be > 0".into()));
    }
    let pairs = &matches.pairs;
    let n = pairs.len();
    let k = minimal_sample_size(cfg.model);
    if n < k {
        return Err(Error::InsufficientMatches { needed: k, found: n });
    }
    if cfg.inlier_px.is_infinite() {
        // Plain least squares over every match.
        let transform = fit_model(cfg.model, pairs)?;
        return Ok(finish(transform, (0..n).collect(), pairs));
    }
    let base = Seed::new(cfg.seed);
    let iterations = if n == k { 1 } else { cfg.iterations.max(1) };
    let best = (0..iterations)
        .into_par_iter()
        .filter_map(|it| {
            let idx = if n == k {
                (0..k).collect()
            } else {
                sample_distinct(&base.derive(it as u64), n, k)
            };
            let t = fit_model(cfg.model, &subset(pairs, &idx)).ok()?;
            let (inl, sse) = consensus(&t, pairs, cfg.inlier_px);
            Some((inl.len(), sse, it, t))
        })
        .min_by(|a, b| b.0.cmp(&a.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)))
        .ok_or(Error::DegenerateConfiguration)?;

    let (_, _, _, mut transform) = best;
    let (mut inliers, _) = consensus(&transform, pairs, cfg.inlier_px);
    for _ in 0..POLISH_ROUNDS {
        if inliers.len() < k {
            break;
        }
        let Ok(t) = fit_model(cfg.model, &subset(pairs, &inliers)) else {
            break;
        };
        let res: Vec<f64> = inliers.iter().map(|&i| residual(&t, &pairs[i])).collect();
        let thr = (3.0 * median(res)).clamp(POLISH_FLOOR_PX, cfg.inlier_px);
        let (next, _) = consensus(&t, pairs, thr);
        transform = t;
        if next == inliers || next.len() < k {
            break;
        }
        inliers = next;
    }
    let needed = cfg.min_inliers.max(k).min(n);
    if inliers.len() < needed {
        return Err(Error::InsufficientMatches {
            needed,
            found: inliers.len(),
        });
    }
    Ok(finish(transform, inliers, pairs))
}

fn finish(transform: PlanarTransform, inliers: Vec<usize>, pairs: &[PointMatch]) -> RobustFit {
    let rms_residual = (inliers
        .iter()
        .map(|&i| residual(&transform, &pairs[i]).powi(2))
        .sum::<f64>()
        / inliers.len().max(1) as f64)
        .sqrt();
    RobustFit {
        transform,
        inliers,
        rms_residual,
    }
}
