//! Library-versus-oracle comparisons on small random instances. Each
//! function returns the largest absolute difference it saw.

use msbench_core::feature_fusion::{
    icfe_head, icfe_iterate, multi_head, nin_fuse, nin_transform, Coefficient, HeadParams, IcfeParams, NinBranch,
    NinParams, Stream,
};
use msbench_core::metrics::average_precision_single;
use msbench_core::pixel_fusion::{conv_refine, ConvKernel};
use msbench_core::registration::depth_guided_attention;
use msbench_core::{BBox, Detection, FeatureMap, Image, LabeledBox, Raster, Seed};
use nalgebra::DVector;

use super::*;

fn max_diff(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len(), "output length");
    got.iter().zip(want).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max)
}

fn flat(m: Mat) -> Vec<f64> {
    m.into_iter().flatten().collect()
}

fn row_major(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    flat(to_mat(m))
}

fn random_head(d: usize, d_h: usize, seed: u64) -> HeadParams {
    HeadParams {
        w_q: random_dmatrix(d, d_h, seed),
        w_k: random_dmatrix(d, d_h, seed.wrapping_add(1)),
        w_v: random_dmatrix(d, d_h, seed.wrapping_add(2)),
    }
}

/// 3x3 RGB image, 1x1 and 3x3 kernels.
pub fn conv(seed: u64) -> f64 {
    let mut rng = Seed::new(seed).rng();
    let img = Image::from_fn(3, 3, 3, |_, _, _| rng.next_f64());
    let mut worst: f64 = 0.0;
    for size in [1, 3] {
        let weights: Vec<f64> = (0..size * size * 9).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let k = ConvKernel::new(size, weights).unwrap();
        let bias = [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)];
        let got = conv_refine(&img, &k, &bias).unwrap();
        worst = worst.max(max_diff(got.data(), &conv_oracle(&img, &k, &bias)));
    }
    worst
}

/// Both branches on a 3x2x4 map, then the weighted fusion.
pub fn nin(seed: u64) -> f64 {
    let x = random_map(3, 2, 4, seed);
    let mut rng = Seed::new(seed ^ 0x55).rng();
    let mut vec4 = || DVector::from_fn(4, |_, _| rng.uniform(-1.0, 1.0));
    let p = NinParams {
        rgb: NinBranch {
            weight: random_dmatrix(4, 4, seed.wrapping_add(1)),
            bias: vec4(),
        },
        tir: NinBranch {
            weight: random_dmatrix(4, 4, seed.wrapping_add(2)),
            bias: vec4(),
        },
        nu: vec4(),
    };
    let d_r = nin_transform(&x, &p, Stream::Rgb).unwrap();
    let d_t = nin_transform(&x, &p, Stream::Tir).unwrap();
    let (fused, _, _) = nin_fuse(&d_r, &d_t, &p).unwrap();
    max_diff(d_r.data(), &nin_oracle(&x, &p.rgb.weight, &p.rgb.bias))
        .max(max_diff(d_t.data(), &nin_oracle(&x, &p.tir.weight, &p.tir.bias)))
        .max(max_diff(fused.data(), &nin_fuse_oracle(&d_r, &d_t, &p)))
}

/// One head with three query and three context tokens of width 4.
pub fn head(seed: u64) -> f64 {
    let tq = random_dmatrix(3, 4, seed);
    let tc = random_dmatrix(3, 4, seed.wrapping_add(1));
    let h = random_head(4, 4, seed.wrapping_add(2));
    let got = icfe_head(&tq, &tc, &h).unwrap();
    max_diff(&row_major(&got), &flat(head_oracle(&to_mat(&tq), &to_mat(&tc), &h)))
}

fn two_head_params(iterations: usize, seed: u64) -> IcfeParams {
    IcfeParams {
        dim: 4,
        heads: vec![random_head(4, 2, seed), random_head(4, 2, seed.wrapping_add(10))],
        w_o: random_dmatrix(4, 4, seed.wrapping_add(20)),
        lambda: vec![Coefficient::Scalar(0.7), Coefficient::PerChannel(vec![0.1, 0.2, 0.3, 0.4])],
        mu: vec![Coefficient::PerChannel(vec![0.4, 0.3, 0.2, 0.1])],
        iterations,
    }
}

/// Two heads with an output projection on four tokens.
pub fn multi(seed: u64) -> f64 {
    let tq = random_dmatrix(4, 4, seed);
    let tc = random_dmatrix(4, 4, seed.wrapping_add(1));
    let p = two_head_params(1, seed.wrapping_add(2));
    let got = multi_head(&tq, &tc, &p).unwrap();
    max_diff(&row_major(&got), &flat(multi_head_oracle(&to_mat(&tq), &to_mat(&tc), &p)))
}

/// 2x2x4 maps, two heads, one to three iterations.
pub fn icfe(seed: u64) -> f64 {
    let x_r = random_map(2, 2, 4, seed);
    let x_t = random_map(2, 2, 4, seed.wrapping_add(1));
    (1..=3)
        .map(|n| {
            let p = two_head_params(n, seed.wrapping_add(2));
            let got = icfe_iterate(&x_r, &x_t, &p).unwrap();
            assert_eq!(got.channels(), 4);
            max_diff(got.data(), &icfe_oracle(&x_r, &x_t, &p))
        })
        .fold(0.0, f64::max)
}

/// 2x2x3 maps with a positive 2x2 depth map on the key grid.
pub fn depth(seed: u64) -> f64 {
    let x_r = random_map(2, 2, 3, seed);
    let x_t = random_map(2, 2, 3, seed.wrapping_add(1));
    let mut rng = Seed::new(seed.wrapping_add(2)).rng();
    let d = FeatureMap::from_fn(2, 2, 1, |_, _, _| rng.uniform(0.2, 2.0));
    let h = random_head(3, 3, seed.wrapping_add(3));
    let (att, out) = depth_guided_attention(&x_r, &x_t, &d, &h).unwrap();
    let (want_att, want_out) = depth_attention_oracle(&x_r, &x_t, &d, &h);
    max_diff(&row_major(&att), &flat(want_att)).max(max_diff(out.data(), &want_out))
}

/// Up to 5 predictions and 3 ground-truth boxes with distinct scores.
pub fn ap(seed: u64) -> f64 {
    let mut rng = Seed::new(seed).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n_gt = rng.below(4) as usize;
        let n_pred = rng.below(6) as usize;
        let mut random_box = || {
            let x = rng.uniform(0.0, 8.0);
            let y = rng.uniform(0.0, 8.0);
            BBox::new(x, y, x + rng.uniform(1.0, 4.0), y + rng.uniform(1.0, 4.0))
        };
        let gts: Vec<LabeledBox> = (0..n_gt).map(|_| LabeledBox::new(random_box(), 0)).collect();
        let boxes: Vec<BBox> = (0..n_pred).map(|_| random_box()).collect();
        let preds: Vec<Detection> = boxes
            .into_iter()
            .enumerate()
            .map(|(i, b)| Detection::new(b, 0.9 - 0.15 * i as f64, 0))
            .collect();
        for thr in [0.1, 0.3, 0.5, 0.7] {
            let got = average_precision_single(&preds, &gts, thr).unwrap();
            worst = worst.max((got - ap_oracle(&preds, &gts, thr)).abs());
        }
    }
    worst
}
