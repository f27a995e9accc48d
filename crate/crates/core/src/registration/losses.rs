//! Joint objectives used to score (and train) registration.

use serde::{Deserialize, Serialize};

use super::descriptors::DescriptorGrid;
use super::matching::DescriptorMatch;
use crate::error::{Error, Result};
use crate::geometry::{FlowField, PlanarTransform, PointMatchSet};
use crate::image::{bilinear_sample, FeatureMap, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || !(self.lambda1 + self.lambda2 > 0.0) {
            return Err(Error::InvalidParameter("loss weights must be non-negative and not both zero".into()));
        }
        Ok(())
    }
}

/// Mean squared reprojection error of `t` over the cell-center pairs; zero
/// for an empty match list.
pub fn msre(a: &DescriptorGrid, b: &DescriptorGrid, matches: &[DescriptorMatch], t: &PlanarTransform) -> f64 {
    if matches.is_empty() {
        return 0.0;
    }
    matches
        .iter()
        .map(|m| {
            let (px, py) = a.cell_centers[m.a];
            let (qx, qy) = b.cell_centers[m.b];
            let (tx, ty) = t.apply(px, py);
            (tx - qx).powi(2) + (ty - qy).powi(2)
        })
        .sum::<f64>()
        / matches.len() as f64
}

/// `lambda1 * sum ||phi_a - phi_b||^2 + lambda2 * MSRE(t)`.
pub fn loftr_joint_loss(
    a: &DescriptorGrid,
    b: &DescriptorGrid,
    matches: &[DescriptorMatch],
    t: &PlanarTransform,
    weights: &LossWeights,
) -> Result<f64> {
    weights.validate()?;
    if a.dim != b.dim {
        return Err(Error::DimMismatch(format!("descriptor dims {} vs {}", a.dim, b.dim)));
    }
    let mut feature = 0.0;
    for m in matches {
        if m.a >= a.len() || m.b >= b.len() {
            return Err(Error::OutOfRange(format!("match ({}, {}) outside the grids", m.a, m.b)));
        }
        feature += a.descriptors[m.a]
            .iter()
            .zip(&b.descriptors[m.b])
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>();
    }
    Ok(weights.lambda1 * feature + weights.lambda2 * msre(a, b, matches, t))
}

/// `lambda1 * sum_(p, q) ||X_R(p) - X_T'(q)||^2 + lambda2 * sum_x ||flow - flow*||^2`
/// with bilinear feature sampling at the match locations.
pub fn superfusion_joint_loss(
    x_rgb: &FeatureMap,
    x_tir_warped: &FeatureMap,
    matches: &PointMatchSet,
    flow: &FlowField,
    flow_target: &FlowField,
    weights: &LossWeights,
) -> Result<f64> {
    weights.validate()?;
    if x_rgb.channels() != x_tir_warped.channels() {
        return Err(Error::ChannelMismatch {
            expected: x_rgb.channels(),
            found: x_tir_warped.channels(),
        });
    }
    if (flow.height(), flow.width()) != (flow_target.height(), flow_target.width()) {
        return Err(Error::ShapeMismatch("flow and target flow differ in size".into()));
    }
    let mut feature = 0.0;
    for m in &matches.pairs {
        for c in 0..x_rgb.channels() {
            let a = bilinear_sample(x_rgb, m.p.0, m.p.1, c);
            let b = bilinear_sample(x_tir_warped, m.q.0, m.q.1, c);
            feature += (a - b).powi(2);
        }
    }
    let flow_term: f64 = flow
        .data()
        .iter()
        .zip(flow_target.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok(weights.lambda1 * feature + weights.lambda2 * flow_term)
}
