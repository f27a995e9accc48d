//! Temperature-softmax descriptor matching with a mutual nearest-neighbour filter.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::descriptors::DescriptorGrid;
use crate::error::{Error, Result};
use crate::geometry::{PointMatch, PointMatchSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub tau: f64,
    pub score_floor: f64,
    pub mutual_nn: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            score_floor: 0.0,
            mutual_nn: true,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::InvalidParameter("tau must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.score_floor) {
            return Err(Error::InvalidParameter("score_floor must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One accepted correspondence between cell `a` and cell `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescriptorMatch {
    pub a: usize,
    pub b: usize,
    pub similarity: f64,
    pub probability: f64,
}

/// `softmax(s / tau)`, shifted by the maximum for stability.
pub fn softmax(scores: &[f64], tau: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|s| ((s - max) / tau).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dims(a: &DescriptorGrid, b: &DescriptorGrid) -> Result<()> {
    if a.dim != b.dim {
        return Err(Error::DimMismatch(format!("descriptor dims {} vs {}", a.dim, b.dim)));
    }
    Ok(())
}

/// Inner products between every descriptor of `a` (rows) and `b` (columns).
pub fn similarity_matrix(a: &DescriptorGrid, b: &DescriptorGrid) -> Result<DMatrix<f64>> {
    check_dims(a, b)?;
    Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| dot(&a.descriptors[i], &b.descriptors[j])))
}

/// Row-wise softmax of the similarity matrix over all cells of `b`.
pub fn match_probabilities(a: &DescriptorGrid, b: &DescriptorGrid, tau: f64) -> Result<DMatrix<f64>> {
    let s = similarity_matrix(a, b)?;
    let mut p = DMatrix::zeros(s.nrows(), s.ncols());
    for i in 0..s.nrows() {
        let row: Vec<f64> = s.row(i).iter().copied().collect();
        for (j, v) in softmax(&row, tau).into_iter().enumerate() {
            p[(i, j)] = v;
        }
    }
    Ok(p)
}

fn argmax(values: impl Iterator<Item = (usize, f64)>) -> Option<(usize, f64)> {
    values.fold(None, |best, (i, v)| match best {
        Some((_, bv)) if bv >= v => best,
        _ => Some((i, v)),
    })
}

/// Matches non-degenerate cells. Each `a` cell takes the `b` cell of highest
/// probability (softmax over non-degenerate `b` cells); the pair is kept if
/// that probability reaches the floor and, with `mutual_nn`, the `a` cell is
/// also the best partner of the `b` cell.
pub fn match_descriptors(a: &DescriptorGrid, b: &DescriptorGrid, cfg: &MatchConfig) -> Result<Vec<DescriptorMatch>> {
    cfg.validate()?;
    check_dims(a, b)?;
    let valid_a: Vec<usize> = (0..a.len()).filter(|&i| !a.degenerate[i]).collect();
    let valid_b: Vec<usize> = (0..b.len()).filter(|&j| !b.degenerate[j]).collect();
    if valid_a.is_empty() || valid_b.is_empty() {
        return Ok(Vec::new());
    }
    let sim = DMatrix::from_fn(valid_a.len(), valid_b.len(), |i, j| {
        dot(&a.descriptors[valid_a[i]], &b.descriptors[valid_b[j]])
    });
    let best_a_for_b: Vec<usize> = (0..valid_b.len())
        .map(|j| argmax((0..valid_a.len()).map(|i| (i, sim[(i, j)]))).map_or(usize::MAX, |(i, _)| i))
        .collect();
    let mut out = Vec::new();
    for i in 0..valid_a.len() {
        let row: Vec<f64> = sim.row(i).iter().copied().collect();
        let probs = softmax(&row, cfg.tau);
        let Some((j, p)) = argmax(probs.iter().copied().enumerate()) else {
            continue;
        };
        if p < cfg.score_floor {
            continue;
        }
        if cfg.mutual_nn && best_a_for_b[j] != i {
            continue;
        }
        out.push(DescriptorMatch {
            a: valid_a[i],
            b: valid_b[j],
            similarity: row[j],
            probability: p,
        });
    }
    Ok(out)
}

/// Cell-center correspondences for [`match_descriptors`].
pub fn match_features(a: &DescriptorGrid, b: &DescriptorGrid, cfg: &MatchConfig) -> Result<PointMatchSet> {
    let matches = match_descriptors(a, b, cfg)?;
    Ok(PointMatchSet::new(
        matches
            .iter()
            .map(|m| PointMatch {
                p: a.cell_centers[m.a],
                q: b.cell_centers[m.b],
                score: m.probability,
            })
            .collect(),
    ))
}
