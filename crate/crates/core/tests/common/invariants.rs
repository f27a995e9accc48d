//! Invariant checks, each driven by a caller-supplied proptest runner.
//! Every function returns the runner's failure report as a string.

use msbench_core::augmentation::{
    add_noise, adjust_color, adjust_contrast, augment_geometric, clahe, complementary_enhance, gamma_gain,
    light_enhance, pixel_transform, random_lighting, ClaheParams, EnhanceMode, EnhanceOp, EnhancePolicy,
    GeometricParams, GeometricRanges, MuMode, PixelParams,
};
use msbench_core::decision_fusion::{local_fuse, nms, FusionPolicy};
use msbench_core::feature_fusion::attention_weights;
use msbench_core::image::{bilinear_sample, resize};
use msbench_core::metrics::average_precision_single;
use msbench_core::pixel_fusion::{pixel_fuse, PixelFusionParams};
use msbench_core::registration::{loftr_joint_loss, match_probabilities, softmax, DescriptorGrid, DescriptorMatch, LossWeights};
use msbench_core::{BBox, Detection, DetectionSet, Image, LabeledBox, Modality, PairedSample, PlanarTransform, Raster, Seed};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

pub fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

/// Same as [`runner`] but with a fixed RNG, so a report is reproducible.
pub fn fixed_runner(cases: u32) -> TestRunner {
    let cfg = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(cfg, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

type Check = std::result::Result<(), String>;

fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Image {
    let mut rng = Seed::new(seed).rng();
    Image::from_fn(h, w, c, |_, _, _| rng.next_f64())
}

fn in_unit(img: &Image) -> bool {
    img.data().iter().all(|v| (0.0..=1.0).contains(v))
}

pub fn random_set(n: usize, classes: u32, seed: u64, modality: Modality) -> DetectionSet {
    let mut rng = Seed::new(seed).rng();
    let dets = (0..n)
        .map(|_| {
            let x = rng.uniform(0.0, 20.0);
            let y = rng.uniform(0.0, 20.0);
            let b = BBox::new(x, y, x + rng.uniform(1.0, 8.0), y + rng.uniform(1.0, 8.0));
            Detection::new(b, rng.next_f64(), rng.below(classes as u64) as u32)
        })
        .collect();
    DetectionSet::new(modality, dets)
}

fn random_gts(n: usize, seed: u64) -> Vec<LabeledBox> {
    random_set(n, 1, seed, Modality::Rgb)
        .detections
        .iter()
        .map(|d| LabeledBox::new(d.bbox, 0))
        .collect()
}

fn random_grid(cells: usize, dim: usize, rng: &mut msbench_core::SplitMix64) -> DescriptorGrid {
    DescriptorGrid {
        grid_h: 1,
        grid_w: cells,
        dim,
        descriptors: (0..cells).map(|_| (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect(),
        cell_centers: (0..cells).map(|i| (i as f64 * 8.0 + 4.0, 4.0)).collect(),
        degenerate: vec![false; cells],
    }
}

/// Matching softmax, attention softmax and descriptor match probabilities.
pub fn softmax_rows(r: &mut TestRunner) -> Check {
    let strategy = (
        prop::collection::vec(-50.0f64..50.0, 1..12),
        0.01f64..10.0,
        (1usize..6, 1usize..6, 1usize..5),
        any::<u64>(),
    );
    r.run(&strategy, |(scores, tau, (n, m, d), seed)| {
        let p = softmax(&scores, tau);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(p.iter().all(|v| *v >= 0.0));

        let q = super::random_dmatrix(n, d, seed).map(|v| v * 10.0);
        let k = super::random_dmatrix(m, d, seed ^ 1).map(|v| v * 10.0);
        for row in attention_weights(&q, &k).unwrap().row_iter() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-9);
        }

        let mut rng = Seed::new(seed).rng();
        let (a, b) = (random_grid(n, d, &mut rng), random_grid(m, d, &mut rng));
        for row in match_probabilities(&a, &b, tau).unwrap().row_iter() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-9);
        }
        Ok(())
    })
    .map_err(|e| e.to_string())
}

/// The four neighbour weights of an interior sample are each non-negative
/// and add up to one.
pub fn bilinear_partition(r: &mut TestRunner) -> Check {
    let strategy = (2usize..10, 2usize..10, 0.0f64..1.0, 0.0f64..1.0);
    r.run(&strategy, |(h, w, fx, fy)| {
        let x = fx * (w - 1) as f64;
        let y = fy * (h - 1) as f64;
        let ones = Image::filled(h, w, 1, 1.0);
        prop_assert!((bilinear_sample(&ones, x, y, 0) - 1.0).abs() <= 1e-12);
        for yy in 0..h {
            for xx in 0..w {
                let delta = Image::from_fn(h, w, 1, |a, b, _| if (a, b) == (yy, xx) { 1.0 } else { 0.0 });
                prop_assert!(bilinear_sample(&delta, x, y, 0) >= 0.0);
            }
        }
        Ok(())
    })
    .map_err(|e| e.to_string())
}

/// Every image-producing operation stays inside `[0, 1]`.
pub fn images_in_unit_range(r: &mut TestRunner) -> Check {
    let strategy = (
        (4usize..12, 4usize..12, any::<u64>()),
        (0.0f64..0.5, 0.0f64..4.0, 0.0f64..4.0, 0.1f64..3.0),
    );
    r.run(&strategy, |((h, w, seed), (sigma, gain, beta, gamma))| {
        let rgb = random_image(h, w, 3, seed);
        let tir = random_image(h, w, 1, seed ^ 3);
        let s = Seed::new(seed ^ 7);
        for img in [&rgb, &tir] {
            prop_assert!(in_unit(&add_noise(img, sigma, &s)));
            prop_assert!(in_unit(&adjust_color(img, &[gain])));
            prop_assert!(in_unit(&adjust_contrast(img, beta, MuMode::PerChannelMean)));
            prop_assert!(in_unit(&gamma_gain(img, gamma, gain)));
            prop_assert!(in_unit(&random_lighting(img, &s)));
            prop_assert!(in_unit(&light_enhance(img)));
            let cp = ClaheParams { tiles: (2, 2), clip_limit: 2.0 };
            prop_assert!(in_unit(&clahe(img, &cp)));
            let p = PixelParams { sigma, alpha: vec![gain], beta, mu_mode: MuMode::GlobalMean };
            prop_assert!(in_unit(&pixel_transform(img, &p, &s).unwrap()));
            prop_assert!(in_unit(&resize(img, h + 3, w + 1)));
        }

        let policy = EnhancePolicy {
            mode: EnhanceMode::Complementary,
            rgb_ops: vec![EnhanceOp::Clahe { tiles: (2, 2), clip_limit: 2.0 }],
            tir_ops: vec![EnhanceOp::LightEnhance],
            gain_rgb: gain / 2.0,
            gain_tir: gain / 2.0,
            ..Default::default()
        };
        let (er, et) = complementary_enhance(&rgb, &tir, &policy, &s).unwrap();
        prop_assert!(in_unit(&er) && in_unit(&et));

        let params = PixelFusionParams::init(h, w, &s.derive(1));
        prop_assert!(in_unit(&pixel_fuse(&rgb, &tir, &params, &s.derive(2)).unwrap()));

        let box_ = LabeledBox::new(BBox::new(1.0, 1.0, 3.0, 3.0), 0);
        let sample = PairedSample::new(rgb, tir, vec![box_]).unwrap();
        let ranges = GeometricRanges { upsilon_amplitude: 0.05, ..Default::default() };
        let g = GeometricParams::sample(&ranges, w, h, &s.derive(3));
        let (warped, _) = augment_geometric(&sample, &g, &s.derive(4)).unwrap();
        prop_assert!(in_unit(&warped.rgb) && in_unit(&warped.tir));
        Ok(())
    })
    .map_err(|e| e.to_string())
}

pub fn nms_idempotent(r: &mut TestRunner) -> Check {
    let strategy = (0usize..25, 1u32..3, any::<u64>(), 0.1f64..0.9);
    r.run(&strategy, |(n, classes, seed, thr)| {
        let once = nms(&random_set(n, classes, seed, Modality::Rgb), thr);
        prop_assert_eq!(nms(&once, thr), once);
        Ok(())
    })
    .map_err(|e| e.to_string())
}

pub fn fused_scores_in_unit_range(r: &mut TestRunner) -> Check {
    let strategy = (0usize..10, 0usize..10, any::<u64>());
    r.run(&strategy, |(n, m, seed)| {
        let rgb = random_set(n, 1, seed, Modality::Rgb);
        let tir = random_set(m, 1, seed ^ 5, Modality::Tir);
        let fused = local_fuse(&rgb, &tir, &FusionPolicy::default()).unwrap();
        prop_assert!(fused.scores().iter().all(|s| (0.0..=1.0).contains(s)));
        Ok(())
    })
    .map_err(|e| e.to_string())
}

pub fn ap_monotone_in_threshold(r: &mut TestRunner) -> Check {
    let strategy = (0usize..5, 0usize..6, any::<u64>(), 0.05f64..0.95, 0.05f64..0.95);
    r.run(&strategy, |(n_gt, n_pred, seed, t1, t2)| {
        let gts = random_gts(n_gt, seed);
        let preds = random_set(n_pred, 1, seed ^ 9, Modality::Rgb).detections;
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a_lo = average_precision_single(&preds, &gts, lo).unwrap();
        let a_hi = average_precision_single(&preds, &gts, hi).unwrap();
        prop_assert!(a_hi <= a_lo + 1e-12, "{} at {} vs {} at {}", a_hi, hi, a_lo, lo);
        Ok(())
    })
    .map_err(|e| e.to_string())
}

pub fn ap_matches_enumeration(r: &mut TestRunner) -> Check {
    let strategy = (0usize..4, 0usize..6, any::<u64>(), 0.1f64..0.9);
    r.run(&strategy, |(n_gt, n_pred, seed, thr)| {
        let gts = random_gts(n_gt, seed);
        let mut preds = random_set(n_pred, 1, seed ^ 11, Modality::Rgb).detections;
        for (i, p) in preds.iter_mut().enumerate() {
            p.score = 0.95 - 0.1 * i as f64;
        }
        let got = average_precision_single(&preds, &gts, thr).unwrap();
        prop_assert!((got - super::ap_oracle(&preds, &gts, thr)).abs() <= 1e-12);
        Ok(())
    })
    .map_err(|e| e.to_string())
}

pub fn registration_loss_non_negative(r: &mut TestRunner) -> Check {
    let strategy = (
        (1usize..6, 1usize..5, any::<u64>()),
        (-5.0f64..5.0, -5.0f64..5.0, 0.0f64..2.0, 0.01f64..2.0),
    );
    r.run(&strategy, |((cells, dim, seed), (tx, ty, l1, l2))| {
        let mut rng = Seed::new(seed).rng();
        let (a, b) = (random_grid(cells, dim, &mut rng), random_grid(cells, dim, &mut rng));
        let matches: Vec<DescriptorMatch> = (0..cells)
            .map(|i| DescriptorMatch { a: i, b: (i + 1) % cells, similarity: 0.0, probability: 1.0 })
            .collect();
        let t = PlanarTransform::translation(tx, ty);
        let loss = loftr_joint_loss(&a, &b, &matches, &t, &LossWeights { lambda1: l1, lambda2: l2 }).unwrap();
        prop_assert!(loss >= 0.0);
        Ok(())
    })
    .map_err(|e| e.to_string())
}
