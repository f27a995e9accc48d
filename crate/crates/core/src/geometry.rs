//! Boxes, planar transforms, dense flow and point matches.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{bilinear_sample, Raster};

/// Axis-aligned box in pixel-edge coordinates: pixel `(y, x)` covers
/// `[x, x + 1] x [y, y + 1]`, so its center is at `(x + 0.5, y + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl BBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f64 {
        (self.x2 - self.x1).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y2 - self.y1).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn is_well_formed(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite())
            && self.x1 < self.x2
            && self.y1 < self.y2
    }

    /// Clips into `[0, width] x [0, height]`.
    pub fn clip(&self, width: f64, height: f64) -> BBox {
        BBox::new(
            self.x1.clamp(0.0, width),
            self.y1.clamp(0.0, height),
            self.x2.clamp(0.0, width),
            self.y2.clamp(0.0, height),
        )
    }

    pub fn inside(&self, width: f64, height: f64) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= width && self.y2 <= height
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    /// Intersection over union; 0 when the union is empty.
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    /// Axis-aligned hull of the four corners mapped through `t`.
    pub fn transformed(&self, t: &PlanarTransform) -> BBox {
        // Box coordinates sit half a pixel off the pixel-center frame `t` acts in.
        let corners = [
            (self.x1, self.y1),
            (self.x2, self.y1),
            (self.x1, self.y2),
            (self.x2, self.y2),
        ];
        let mut out = BBox::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (x, y) in corners {
            let (u, v) = t.apply(x - 0.5, y - 0.5);
            out.x1 = out.x1.min(u + 0.5);
            out.y1 = out.y1.min(v + 0.5);
            out.x2 = out.x2.max(u + 0.5);
            out.y2 = out.y2.max(v + 0.5);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Affine,
    Homography,
}

/// Affine or projective map between pixel-center coordinate frames, stored
/// as a homogeneous 3x3 matrix acting on column vectors `(x, y, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarTransform {
    kind: TransformKind,
    matrix: Matrix3<f64>,
}

const MIN_DET: f64 = 1e-12;

impl PlanarTransform {
    pub fn identity() -> Self {
        Self {
            kind: TransformKind::Affine,
            matrix: Matrix3::identity(),
        }
    }

    /// Affine map `p -> A p + b`.
    pub fn affine(a: [[f64; 2]; 2], b: [f64; 2]) -> Result<Self> {
        let m = Matrix3::new(a[0][0], a[0][1], b[0], a[1][0], a[1][1], b[1], 0.0, 0.0, 1.0);
        Self::from_matrix(TransformKind::Affine, m)
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            kind: TransformKind::Affine,
            matrix: Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0),
        }
    }

    /// Rotation by `theta` radians and isotropic `scale` about `(cx, cy)`,
    /// followed by translation `(tx, ty)`.
    pub fn similarity_about(theta: f64, scale: f64, tx: f64, ty: f64, cx: f64, cy: f64) -> Result<Self> {
        let (s, c) = theta.sin_cos();
        let a = [[scale * c, -scale * s], [scale * s, scale * c]];
        let b = [
            cx + tx - a[0][0] * cx - a[0][1] * cy,
            cy + ty - a[1][0] * cx - a[1][1] * cy,
        ];
        Self::affine(a, b)
    }

    pub fn from_matrix(kind: TransformKind, mut matrix: Matrix3<f64>) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularTransform);
        }
        match kind {
            TransformKind::Affine => {
                if matrix[(2, 0)] != 0.0 || matrix[(2, 1)] != 0.0 || matrix[(2, 2)] != 1.0 {
                    return Err(Error::InvalidParameter(
                        "affine matrix must have last row [0, 0, 1]".into(),
                    ));
                }
                let det = matrix[(0, 0)] * matrix[(1, 1)] - matrix[(0, 1)] * matrix[(1, 0)];
                if det.abs() <= MIN_DET {
                    return Err(Error::SingularTransform);
                }
            }
            TransformKind::Homography => {
                if matrix.determinant().abs() <= MIN_DET {
                    return Err(Error::SingularTransform);
                }
                let s = matrix[(2, 2)];
                if s.abs() > 1e-12 {
                    matrix /= s;
                }
            }
        }
        Ok(Self { kind, matrix })
    }

    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.matrix;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let v = self.matrix * Vector3::new(x, y, 1.0);
        match self.kind {
            TransformKind::Affine => (v.x, v.y),
            TransformKind::Homography => (v.x / v.z, v.y / v.z),
        }
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self.matrix.try_inverse().ok_or(Error::SingularTransform)?;
        let inv = match self.kind {
            TransformKind::Affine => {
                let mut m = inv;
                m[(2, 0)] = 0.0;
                m[(2, 1)] = 0.0;
                m[(2, 2)] = 1.0;
                m
            }
            TransformKind::Homography => inv,
        };
        Self::from_matrix(self.kind, inv)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &PlanarTransform) -> Result<Self> {
        let kind = if self.kind == TransformKind::Affine && other.kind == TransformKind::Affine {
            TransformKind::Affine
        } else {
            TransformKind::Homography
        };
        let mut m = self.matrix * other.matrix;
        if kind == TransformKind::Affine {
            m[(2, 0)] = 0.0;
            m[(2, 1)] = 0.0;
            m[(2, 2)] = 1.0;
        }
        Self::from_matrix(kind, m)
    }

    /// Largest displacement between `self` and `other` over the four corners
    /// of a `width x height` frame.
    pub fn max_corner_error(&self, other: &PlanarTransform, width: usize, height: usize) -> f64 {
        let xm = width as f64 - 1.0;
        let ym = height as f64 - 1.0;
        [(0.0, 0.0), (xm, 0.0), (0.0, ym), (xm, ym)]
            .iter()
            .map(|&(x, y)| {
                let (a, b) = self.apply(x, y);
                let (c, d) = other.apply(x, y);
                ((a - c).powi(2) + (b - d).powi(2)).sqrt()
            })
            .fold(0.0, f64::max)
    }

    pub fn frobenius_distance(&self, other: &PlanarTransform) -> f64 {
        (self.matrix - other.matrix).norm()
    }
}

#[derive(Serialize, Deserialize)]
struct TransformRepr {
    kind: TransformKind,
    matrix: [[f64; 3]; 3],
}

impl Serialize for PlanarTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TransformRepr {
            kind: self.kind,
            matrix: self.rows(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PlanarTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = TransformRepr::deserialize(d)?;
        let m = r.matrix;
        let matrix = Matrix3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        );
        PlanarTransform::from_matrix(r.kind, matrix).map_err(serde::de::Error::custom)
    }
}

/// Per-pixel displacement `(dx, dy)`; a flow-warped raster samples its source
/// at `(x + dx, y + dy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width * 2],
        }
    }

    pub fn uniform(height: usize, width: usize, dx: f64, dy: f64) -> Self {
        let mut f = Self::zeros(height, width);
        for p in f.data.chunks_exact_mut(2) {
            p[0] = dx;
            p[1] = dy;
        }
        f
    }

    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 2 {
            return Err(Error::ShapeMismatch(format!(
                "flow data length {} != {height}x{width}x2",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("flow contains non-finite values".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> (f64, f64) {
        let i = (y * self.width + x) * 2;
        (self.data[i], self.data[i + 1])
    }

    pub fn set(&mut self, y: usize, x: usize, d: (f64, f64)) {
        let i = (y * self.width + x) * 2;
        self.data[i] = d.0;
        self.data[i + 1] = d.1;
    }

    pub fn max_magnitude(&self) -> f64 {
        self.data
            .chunks_exact(2)
            .map(|p| p[0].hypot(p[1]))
            .fold(0.0, f64::max)
    }

    /// Rescales vectors longer than `max` down to length `max`.
    pub fn clamp_magnitude(&mut self, max: f64) {
        for p in self.data.chunks_exact_mut(2) {
            let m = p[0].hypot(p[1]);
            if m > max && m > 0.0 {
                p[0] *= max / m;
                p[1] *= max / m;
            }
        }
    }

    /// Dense flow induced by a planar transform: `(dx, dy) = t(p) - p`.
    pub fn from_transform(t: &PlanarTransform, height: usize, width: usize) -> Self {
        let mut f = Self::zeros(height, width);
        for y in 0..height {
            for x in 0..width {
                let (u, v) = t.apply(x as f64, y as f64);
                f.set(y, x, (u - x as f64, v - y as f64));
            }
        }
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMatch {
    /// Location in the first (query) image.
    pub p: (f64, f64),
    /// Location in the second image.
    pub q: (f64, f64),
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointMatchSet {
    pub pairs: Vec<PointMatch>,
}

impl PointMatchSet {
    pub fn new(pairs: Vec<PointMatch>) -> Self {
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Builds exact correspondences `p -> t(p)` with unit score.
    pub fn from_transform(points: &[(f64, f64)], t: &PlanarTransform) -> Self {
        Self::new(
            points
                .iter()
                .map(|&p| PointMatch {
                    p,
                    q: t.apply(p.0, p.1),
                    score: 1.0,
                })
                .collect(),
        )
    }
}

/// Inverse-mapped warp: `out(p) = bilinear(src, t^-1(p))`, zero outside the
/// source frame.
pub fn warp_raster<R: Raster>(src: &R, t: &PlanarTransform, height: usize, width: usize) -> Result<R> {
    let inv = t.inverse()?;
    let ch = src.channels();
    let mut data = Vec::with_capacity(height * width * ch);
    for y in 0..height {
        for x in 0..width {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            for c in 0..ch {
                data.push(bilinear_sample(src, sx, sy, c));
            }
        }
    }
    Ok(R::from_raw(height, width, ch, data))
}

/// `out(x) = bilinear(src, x + flow(x))`, zero outside the source frame.
pub fn warp_with_flow<R: Raster>(src: &R, flow: &FlowField) -> Result<R> {
    if (flow.height(), flow.width()) != src.dims() {
        return Err(Error::ShapeMismatch(format!(
            "flow is {}x{}, image is {}x{}",
            flow.height(),
            flow.width(),
            src.height(),
            src.width()
        )));
    }
    let ch = src.channels();
    let mut data = Vec::with_capacity(src.data().len());
    for y in 0..src.height() {
        for x in 0..src.width() {
            let (dx, dy) = flow.get(y, x);
            for c in 0..ch {
                data.push(bilinear_sample(src, x as f64 + dx, y as f64 + dy, c));
            }
        }
    }
    Ok(R::from_raw(src.height(), src.width(), ch, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_round_trip() {
        let t = PlanarTransform::similarity_about(0.2, 1.1, 3.0, -2.0, 10.0, 12.0).unwrap();
        let id = t.compose(&t.inverse().unwrap()).unwrap();
        assert!(id.frobenius_distance(&PlanarTransform::identity()) < 1e-12);
    }

    #[test]
    fn singular_rejected() {
        assert!(PlanarTransform::affine([[1.0, 2.0], [2.0, 4.0]], [0.0, 0.0]).is_err());
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0);
        assert!(PlanarTransform::from_matrix(TransformKind::Homography, m).is_err());
    }

    #[test]
    fn box_translation_through_transform() {
        let b = BBox::new(2.0, 3.0, 6.0, 8.0);
        let moved = b.transformed(&PlanarTransform::translation(3.0, 0.0));
        assert_eq!(moved, BBox::new(5.0, 3.0, 9.0, 8.0));
    }

    #[test]
    fn transform_json_is_row_major() {
        let t = PlanarTransform::translation(4.0, -1.0);
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, r#"{"kind":"affine","matrix":[[1.0,0.0,4.0],[0.0,1.0,-1.0],[0.0,0.0,1.0]]}"#);
        let back: PlanarTransform = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn iou_building_blocks() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        let b = BBox::new(1.0, 0.0, 3.0, 2.0);
        assert_eq!(a.intersection(&b), 2.0);
        assert!(a.is_well_formed());
        assert!(!BBox::new(1.0, 0.0, 1.0, 2.0).is_well_formed());
    }
}
