//! Feature-level fusion: a residual 1x1 module with dynamic weighting (NIN),
//! iterative multi-head cross-attention between the two streams (ICFE), and
//! the branch wirings that combine them.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{FeatureMap, Raster};
use crate::pixel_fusion::sigmoid;
use crate::rng::Seed;

/// Which backbone a feature map came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Rgb,
    Tir,
}

/// One stream's 1x1 convolution: a `C x C` matrix and a `C` bias.
#[derive(Debug, Clone, PartialEq)]
pub struct NinBranch {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl NinBranch {
    pub fn zeros(channels: usize) -> Self {
        Self {
            weight: DMatrix::zeros(channels, channels),
            bias: DVector::zeros(channels),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NinParams {
    pub rgb: NinBranch,
    pub tir: NinBranch,
    /// Projection from pooled channels to the scalar logit of each map.
    pub nu: DVector<f64>,
}

impl NinParams {
    pub fn zeros(channels: usize) -> Self {
        Self {
            rgb: NinBranch::zeros(channels),
            tir: NinBranch::zeros(channels),
            nu: DVector::zeros(channels),
        }
    }

    /// Weights and `nu` uniform in `(-1/sqrt(C), 1/sqrt(C))`, zero biases.
    pub fn init(channels: usize, seed: &Seed) -> Self {
        let mut rng = seed.rng();
        let s = 1.0 / (channels.max(1) as f64).sqrt();
        let mut mat = || DMatrix::from_fn(channels, channels, |_, _| rng.uniform(-s, s));
        let (wr, wt) = (mat(), mat());
        let mut rng = seed.derive(1).rng();
        Self {
            rgb: NinBranch {
                weight: wr,
                bias: DVector::zeros(channels),
            },
            tir: NinBranch {
                weight: wt,
                bias: DVector::zeros(channels),
            },
            nu: DVector::from_fn(channels, |_, _| rng.uniform(-s, s)),
        }
    }

    pub fn channels(&self) -> usize {
        self.nu.len()
    }

    fn branch(&self, stream: Stream) -> &NinBranch {
        match stream {
            Stream::Rgb => &self.rgb,
            Stream::Tir => &self.tir,
        }
    }

    fn validate(&self) -> Result<()> {
        let c = self.channels();
        for b in [&self.rgb, &self.tir] {
            if b.weight.nrows() != c || b.weight.ncols() != c || b.bias.len() != c {
                return Err(Error::DimMismatch(format!(
                    "NIN branch is {}x{} with bias {}, expected {c}x{c}",
                    b.weight.nrows(),
                    b.weight.ncols(),
                    b.bias.len()
                )));
            }
        }
        Ok(())
    }
}

/// `D = X + (W x + zeta)` at every pixel.
pub fn nin_transform(x: &FeatureMap, params: &NinParams, stream: Stream) -> Result<FeatureMap> {
    params.validate()?;
    let c = params.channels();
    if x.channels() != c {
        return Err(Error::DimMismatch(format!("map has {} channels, NIN expects {c}", x.channels())));
    }
    let branch = params.branch(stream);
    let mut out = x.clone();
    for (dst, src) in out.data_mut().chunks_exact_mut(c).zip(x.data().chunks_exact(c)) {
        for (i, d) in dst.iter_mut().enumerate() {
            let mut acc = branch.bias[i];
            for (j, &v) in src.iter().enumerate() {
                acc += branch.weight[(i, j)] * v;
            }
            *d += acc;
        }
    }
    Ok(out)
}

/// Per-channel global average pool.
pub fn global_average_pool(x: &FeatureMap) -> Vec<f64> {
    let c = x.channels();
    let mut acc = vec![0.0; c];
    for px in x.data().chunks_exact(c) {
        for (a, &v) in acc.iter_mut().zip(px) {
            *a += v;
        }
    }
    let n = (x.height() * x.width()).max(1) as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Scalar weight `sigmoid(nu . GAP(D))`.
pub fn dynamic_weight(d: &FeatureMap, nu: &DVector<f64>) -> Result<f64> {
    if d.channels() != nu.len() {
        return Err(Error::DimMismatch(format!(
            "map has {} channels, nu has {}",
            d.channels(),
            nu.len()
        )));
    }
    let pooled = global_average_pool(d);
    Ok(sigmoid(pooled.iter().zip(nu.iter()).map(|(p, w)| p * w).sum()))
}

/// Returns the fused map and the two weights `(alpha_R, alpha_T)`.
pub fn nin_fuse(d_rgb: &FeatureMap, d_tir: &FeatureMap, params: &NinParams) -> Result<(FeatureMap, f64, f64)> {
    if !d_rgb.same_shape(d_tir) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            d_rgb.height(),
            d_rgb.width(),
            d_rgb.channels(),
            d_tir.height(),
            d_tir.width(),
            d_tir.channels()
        )));
    }
    let a_r = dynamic_weight(d_rgb, &params.nu)?;
    let a_t = dynamic_weight(d_tir, &params.nu)?;
    let fused = d_rgb.zip_with(d_tir, |r, t| a_r * r + a_t * t)?;
    Ok((fused, a_r, a_t))
}

/// An iteration weight: one scalar, or one value per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Scalar(f64),
    PerChannel(Vec<f64>),
}

impl Coefficient {
    fn at(&self, channel: usize) -> f64 {
        match self {
            Coefficient::Scalar(v) => *v,
            Coefficient::PerChannel(v) => v[channel],
        }
    }

    fn check(&self, d: usize) -> Result<()> {
        match self {
            Coefficient::PerChannel(v) if v.len() != d => Err(Error::DimMismatch(format!(
                "per-channel coefficient has {} entries, model dim is {d}",
                v.len()
            ))),
            _ => Ok(()),
        }
    }
}

/// Projections for one attention head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub w_q: DMatrix<f64>,
    pub w_k: DMatrix<f64>,
    pub w_v: DMatrix<f64>,
}

/// Cross-attention parameters. The projections are shared by both query
/// directions and all iterations. `lambda[k]` and `mu[k]` weight iteration
/// `k`; a list shorter than the iteration count repeats its last entry.
#[derive(Debug, Clone, PartialEq)]
pub struct IcfeParams {
    pub dim: usize,
    pub heads: Vec<HeadParams>,
    pub w_o: DMatrix<f64>,
    pub lambda: Vec<Coefficient>,
    pub mu: Vec<Coefficient>,
    pub iterations: usize,
}

impl IcfeParams {
    /// All projections uniform in `(-1/sqrt(d), 1/sqrt(d))`, `lambda = mu = 0.5`.
    pub fn init(dim: usize, heads: usize, iterations: usize, seed: &Seed) -> Result<Self> {
        let d_h = head_dim(dim, heads)?;
        let s = 1.0 / (dim as f64).sqrt();
        let mut rng = seed.rng();
        let mut mat = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.uniform(-s, s));
        let heads_vec = (0..heads)
            .map(|_| HeadParams {
                w_q: mat(dim, d_h),
                w_k: mat(dim, d_h),
                w_v: mat(dim, d_h),
            })
            .collect();
        let p = Self {
            dim,
            heads: heads_vec,
            w_o: mat(dim, dim),
            lambda: vec![Coefficient::Scalar(0.5)],
            mu: vec![Coefficient::Scalar(0.5)],
            iterations,
        };
        p.validate()?;
        Ok(p)
    }

    /// Identity-like projections: head `h` reads and writes channel block `h`.
    pub fn block_identity(dim: usize, heads: usize, iterations: usize) -> Result<Self> {
        let d_h = head_dim(dim, heads)?;
        let block = |h: usize| DMatrix::from_fn(dim, d_h, |r, c| if r == h * d_h + c { 1.0 } else { 0.0 });
        let p = Self {
            dim,
            heads: (0..heads)
                .map(|h| HeadParams {
                    w_q: block(h),
                    w_k: block(h),
                    w_v: block(h),
                })
                .collect(),
            w_o: DMatrix::identity(dim, dim),
            lambda: vec![Coefficient::Scalar(0.5)],
            mu: vec![Coefficient::Scalar(0.5)],
            iterations,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads.len().max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::BadConfig("ICFE needs at least one iteration".into()));
        }
        let d_h = head_dim(self.dim, self.heads.len())?;
        for (i, h) in self.heads.iter().enumerate() {
            for m in [&h.w_q, &h.w_k, &h.w_v] {
                if m.nrows() != self.dim || m.ncols() != d_h {
                    return Err(Error::DimMismatch(format!(
                        "head {i} projection is {}x{}, expected {}x{d_h}",
                        m.nrows(),
                        m.ncols(),
                        self.dim
                    )));
                }
            }
        }
        if self.w_o.nrows() != self.dim || self.w_o.ncols() != self.dim {
            return Err(Error::DimMismatch("W_O must be d x d".into()));
        }
        if self.lambda.is_empty() || self.mu.is_empty() {
            return Err(Error::BadConfig("lambda and mu need at least one entry".into()));
        }
        for c in self.lambda.iter().chain(&self.mu) {
            c.check(self.dim)?;
        }
        Ok(())
    }

    fn lambda_at(&self, k: usize) -> &Coefficient {
        &self.lambda[k.min(self.lambda.len() - 1)]
    }

    fn mu_at(&self, k: usize) -> &Coefficient {
        &self.mu[k.min(self.mu.len() - 1)]
    }
}

fn head_dim(dim: usize, heads: usize) -> Result<usize> {
    if heads == 0 || dim == 0 || dim % heads != 0 {
        return Err(Error::DimMismatch(format!("model dim {dim} is not divisible by {heads} heads")));
    }
    Ok(dim / heads)
}

/// Softmax of `q_i . k_j / sqrt(d_h)` for one query row.
fn attention_row(q: &[f64], keys: &DMatrix<f64>, scale: f64, out: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for (j, o) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for (c, &qv) in q.iter().enumerate() {
            s += qv * keys[(j, c)];
        }
        *o = s * scale;
        max = max.max(*o);
    }
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Full attention matrix `softmax(Q K^T / sqrt(d_h))` (rows are queries).
pub fn attention_weights(q: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if q.ncols() != k.ncols() {
        return Err(Error::DimMismatch(format!("query dim {} vs key dim {}", q.ncols(), k.ncols())));
    }
    let scale = 1.0 / (q.ncols().max(1) as f64).sqrt();
    let mut w = DMatrix::zeros(q.nrows(), k.nrows());
    let mut row = vec![0.0; k.nrows()];
    for i in 0..q.nrows() {
        let qi: Vec<f64> = q.row(i).iter().copied().collect();
        attention_row(&qi, k, scale, &mut row);
        for (j, &v) in row.iter().enumerate() {
            w[(i, j)] = v;
        }
    }
    Ok(w)
}

/// One head: queries from `t_query`, keys and values from `t_context`.
/// Rows are computed independently, so memory stays `O(N d)`.
pub fn icfe_head(t_query: &DMatrix<f64>, t_context: &DMatrix<f64>, head: &HeadParams) -> Result<DMatrix<f64>> {
    let d = head.w_q.nrows();
    if t_query.ncols() != d || t_context.ncols() != d {
        return Err(Error::DimMismatch(format!(
            "tokens have {} / {} features, head expects {d}",
            t_query.ncols(),
            t_context.ncols()
        )));
    }
    if t_context.nrows() == 0 {
        return Err(Error::EmptyInput("no context tokens".into()));
    }
    let q = t_query * &head.w_q;
    let k = t_context * &head.w_k;
    let v = t_context * &head.w_v;
    let d_h = q.ncols();
    let scale = 1.0 / (d_h as f64).sqrt();
    let n_keys = k.nrows();
    let rows: Vec<Vec<f64>> = (0..q.nrows())
        .into_par_iter()
        .map(|i| {
            let qi: Vec<f64> = q.row(i).iter().copied().collect();
            let mut w = vec![0.0; n_keys];
            attention_row(&qi, &k, scale, &mut w);
            let mut z = vec![0.0; d_h];
            for (j, &wj) in w.iter().enumerate() {
                for (c, zc) in z.iter_mut().enumerate() {
                    *zc += wj * v[(j, c)];
                }
            }
            z
        })
        .collect();
    Ok(DMatrix::from_fn(q.nrows(), d_h, |r, c| rows[r][c]))
}

/// Multi-head output `concat_h(Z_h) W_O`, heads concatenated in order.
pub fn multi_head(t_query: &DMatrix<f64>, t_context: &DMatrix<f64>, params: &IcfeParams) -> Result<DMatrix<f64>> {
    let d_h = params.head_dim();
    let mut concat = DMatrix::zeros(t_query.nrows(), params.dim);
    for (h, head) in params.heads.iter().enumerate() {
        let z = icfe_head(t_query, t_context, head)?;
        concat.columns_mut(h * d_h, d_h).copy_from(&z);
    }
    Ok(concat * &params.w_o)
}

fn weighted_sum(z_r: &DMatrix<f64>, z_t: &DMatrix<f64>, lambda: &Coefficient, mu: &Coefficient) -> DMatrix<f64> {
    DMatrix::from_fn(z_r.nrows(), z_r.ncols(), |r, c| lambda.at(c) * z_r[(r, c)] + mu.at(c) * z_t[(r, c)])
}

/// Iterative cross-attention. Iteration `k` computes `Z_R` (RGB queries TIR)
/// and `Z_T` (TIR queries RGB), fuses them as `lambda_k Z_R + mu_k Z_T`, and
/// hands `Z_R`, `Z_T` on as the next token sets. With `n = 1` the result is
/// the first fused value; for `n >= 2` it is `V + tanh(V)` where `V` is the
/// fused value of iteration `n - 1`.
pub fn icfe_iterate(x_rgb: &FeatureMap, x_tir: &FeatureMap, params: &IcfeParams) -> Result<FeatureMap> {
    params.validate()?;
    if !x_rgb.same_shape(x_tir) {
        return Err(Error::DimMismatch("ICFE inputs must share a shape".into()));
    }
    if x_rgb.channels() != params.dim {
        return Err(Error::DimMismatch(format!(
            "maps have {} channels, model dim is {}",
            x_rgb.channels(),
            params.dim
        )));
    }
    let n = params.iterations;
    let attention_iters = if n == 1 { 1 } else { n - 1 };
    let mut t_r = x_rgb.to_tokens();
    let mut t_t = x_tir.to_tokens();
    let mut v = DMatrix::zeros(t_r.nrows(), params.dim);
    for k in 0..attention_iters {
        let z_r = multi_head(&t_r, &t_t, params)?;
        let z_t = multi_head(&t_t, &t_r, params)?;
        v = weighted_sum(&z_r, &z_t, params.lambda_at(k), params.mu_at(k));
        t_r = z_r;
        t_t = z_t;
    }
    if n >= 2 {
        v = v.map(|x| x + x.tanh());
    }
    FeatureMap::from_tokens(x_rgb.height(), x_rgb.width(), &v)
}

/// Branch combination of the feature-fusion block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Wiring {
    #[serde(rename = "B")]
    Baseline,
    #[serde(rename = "I")]
    Icfe,
    #[serde(rename = "N")]
    Nin,
    #[serde(rename = "I+N")]
    IcfeNin,
}

impl FromStr for Wiring {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "B" => Ok(Wiring::Baseline),
            "I" => Ok(Wiring::Icfe),
            "N" => Ok(Wiring::Nin),
            "I+N" => Ok(Wiring::IcfeNin),
            other => Err(Error::UnknownWiring(other.to_string())),
        }
    }
}

impl fmt::Display for Wiring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Wiring::Baseline => "B",
            Wiring::Icfe => "I",
            Wiring::Nin => "N",
            Wiring::IcfeNin => "I+N",
        })
    }
}

/// Which streams feed the two branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum InputPairing {
    #[default]
    #[serde(rename = "R+T")]
    RgbTir,
    #[serde(rename = "R+R")]
    RgbRgb,
    #[serde(rename = "T+T")]
    TirTir,
}

impl FromStr for InputPairing {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "R+T" => Ok(InputPairing::RgbTir),
            "R+R" => Ok(InputPairing::RgbRgb),
            "T+T" => Ok(InputPairing::TirTir),
            other => Err(Error::UnknownWiring(other.to_string())),
        }
    }
}

impl fmt::Display for InputPairing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputPairing::RgbTir => "R+T",
            InputPairing::RgbRgb => "R+R",
            InputPairing::TirTir => "T+T",
        })
    }
}

/// Combines two feature maps. The first branch uses the RGB NIN weights and
/// the second the TIR weights, whatever the pairing.
///
/// * `B`: `(A + B) / 2`
/// * `N`: `nin_fuse(nin(A), nin(B))`
/// * `I`: `icfe(A, B)`
/// * `I+N`: with `V = icfe(A, B)`, `nin_fuse(nin(A + V), nin(B + V))`
pub fn wire_fusion(
    x_rgb: &FeatureMap,
    x_tir: &FeatureMap,
    wiring: Wiring,
    pairing: InputPairing,
    nin: &NinParams,
    icfe: &IcfeParams,
) -> Result<FeatureMap> {
    let (a, b) = match pairing {
        InputPairing::RgbTir => (x_rgb, x_tir),
        InputPairing::RgbRgb => (x_rgb, x_rgb),
        InputPairing::TirTir => (x_tir, x_tir),
    };
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch("feature maps must share a shape".into()));
    }
    let nin_both = |a: &FeatureMap, b: &FeatureMap| -> Result<FeatureMap> {
        let d_a = nin_transform(a, nin, Stream::Rgb)?;
        let d_b = nin_transform(b, nin, Stream::Tir)?;
        Ok(nin_fuse(&d_a, &d_b, nin)?.0)
    };
    match wiring {
        Wiring::Baseline => a.zip_with(b, |u, v| 0.5 * (u + v)),
        Wiring::Nin => nin_both(a, b),
        Wiring::Icfe => icfe_iterate(a, b, icfe),
        Wiring::IcfeNin => {
            let v = icfe_iterate(a, b, icfe)?;
            let av = a.zip_with(&v, |x, y| x + y)?;
            let bv = b.zip_with(&v, |x, y| x + y)?;
            nin_both(&av, &bv)
        }
    }
}
