//! Implementation-independent oracles for the numeric kernels.

use malvis_core::cam::{gradcam_raw, hirescam_raw, upsample_heatmap, Heatmap, TensorStack};
use malvis_core::imagegen::{resize_image, GrayscaleImage};
use malvis_core::masking::{upsample_mask, ClassMask};
use malvis_core::refnet::{HeadKind, RefNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_stack(rng: &mut ChaCha8Rng, f: usize, r: usize, c: usize) -> TensorStack {
    TensorStack::new(f, r, c, (0..f * r * c).map(|_| rng.random_range(-3.0f32..3.0)).collect()).unwrap()
}

/// Direct triple-loop evaluation of the GradCAM weighted sum.
fn naive_gradcam(a: &TensorStack, g: &TensorStack) -> Vec<f64> {
    let (f, r, c) = a.shape();
    let mut out = vec![0.0; r * c];
    for k in 0..f {
        let mut alpha = 0.0;
        for i in 0..r {
            for j in 0..c {
                alpha += g.get(k, i, j) as f64;
            }
        }
        alpha /= (r * c) as f64;
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] += alpha * a.get(k, i, j) as f64;
            }
        }
    }
    out
}

fn naive_hirescam(a: &TensorStack, g: &TensorStack) -> Vec<f64> {
    let (f, r, c) = a.shape();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            for k in 0..f {
                out[i * c + j] += g.get(k, i, j) as f64 * a.get(k, i, j) as f64;
            }
        }
    }
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn cam_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let f = rng.random_range(1..=64);
        let d = rng.random_range(1..=7);
        let a = random_stack(&mut rng, f, d, d);
        let g = random_stack(&mut rng, f, d, d);
        assert!(max_abs_diff(&gradcam_raw(&a, &g).unwrap().values, &naive_gradcam(&a, &g)) < 1e-5);
        assert!(max_abs_diff(&hirescam_raw(&a, &g).unwrap().values, &naive_hirescam(&a, &g)) < 1e-5);
    }
}

#[test]
fn cam_three_by_three_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random_stack(&mut rng, 2, 3, 3);
    let g = random_stack(&mut rng, 2, 3, 3);
    assert!(max_abs_diff(&gradcam_raw(&a, &g).unwrap().values, &naive_gradcam(&a, &g)) < 1e-6);
}

/// Bilinear evaluation written as a separable tent-kernel sum over all source
/// pixels, with the sample position clamped to the source extent.
fn tent_bilinear(src: &[f64], sw: usize, sh: usize, tw: usize, th: usize) -> Vec<f64> {
    let pos = |o: usize, s: usize, t: usize| ((o as f64 + 0.5) * (s as f64 / t as f64) - 0.5).clamp(0.0, (s - 1) as f64);
    let tent = |d: f64| (1.0 - d.abs()).max(0.0);
    let mut out = Vec::new();
    for y in 0..th {
        let sy = pos(y, sh, th);
        for x in 0..tw {
            let sx = pos(x, sw, tw);
            let mut v = 0.0;
            for i in 0..sh {
                for j in 0..sw {
                    v += src[i * sw + j] * tent(sy - i as f64) * tent(sx - j as f64);
                }
            }
            out.push(v);
        }
    }
    out
}

#[test]
fn resize_matches_tent_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let (sw, sh) = (rng.random_range(1..9), rng.random_range(1..9));
        let (tw, th) = (rng.random_range(1..20), rng.random_range(1..20));
        let pixels: Vec<u8> = (0..sw * sh).map(|_| rng.random()).collect();
        let img = GrayscaleImage::new(sw, sh, pixels.clone()).unwrap();
        let plane: Vec<f64> = pixels.iter().map(|&p| p as f64).collect();
        let expected = tent_bilinear(&plane, sw, sh, tw, th);
        let out = resize_image(&img, tw, th).unwrap();
        for (&got, want) in out.pixels().iter().zip(expected) {
            // Rounding may flip at exact .5 ties between the two formulations.
            assert!((got as f64 - want).abs() <= 0.5 + 1e-9, "{got} vs {want}");
        }
    }
}

#[test]
fn heatmap_upsample_matches_tent_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let (r, c) = (rng.random_range(1..8), rng.random_range(1..8));
        let (tw, th) = (rng.random_range(1..30), rng.random_range(1..30));
        let values: Vec<f64> = (0..r * c).map(|_| rng.random()).collect();
        let hm = Heatmap::new(r, c, values.clone()).unwrap();
        let up = upsample_heatmap(&hm, tw, th).unwrap();
        assert_eq!(up.dims(), (th, tw));
        assert!(max_abs_diff(up.values(), &tent_bilinear(&values, c, r, tw, th)) < 1e-6);
    }
}

#[test]
fn mask_upsample_matches_nearest_oracle() {
    let m = ClassMask::new("c", 2, 2, vec![1, 0, 0, 1]).unwrap();
    let up = upsample_mask(&m, 4, 4).unwrap();
    for y in 0..4 {
        for x in 0..4 {
            // Output center (x + 0.5) / 4 in unit coordinates lands in source cell floor(.. * 2).
            let sx = (((x as f64 + 0.5) / 4.0) * 2.0) as usize;
            let sy = (((y as f64 + 0.5) / 4.0) * 2.0) as usize;
            assert_eq!(up.bits()[y * 4 + x], m.bits()[sy * 2 + sx]);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let (w, h) = (rng.random_range(1..8), rng.random_range(1..8));
        let (tw, th) = (rng.random_range(1..25), rng.random_range(1..25));
        let bits: Vec<u8> = (0..w * h).map(|_| rng.random_range(0..2)).collect();
        let m = ClassMask::new("c", w, h, bits).unwrap();
        let up = upsample_mask(&m, tw, th).unwrap();
        for y in 0..th {
            for x in 0..tw {
                // Nearest source center by distance; ties cannot occur for these ratios
                // except at exact midpoints, where the higher index wins.
                let nearest = |o: usize, s: usize, t: usize| {
                    let p = (o as f64 + 0.5) * s as f64 / t as f64;
                    (0..s)
                        .min_by(|&a, &b| {
                            let da = (p - (a as f64 + 0.5)).abs();
                            let db = (p - (b as f64 + 0.5)).abs();
                            da.partial_cmp(&db).unwrap().then(b.cmp(&a))
                        })
                        .unwrap()
                };
                assert_eq!(up.bits()[y * tw + x], m.bits()[nearest(y, h, th) * w + nearest(x, w, tw)]);
            }
        }
    }
}

fn random_image(rng: &mut ChaCha8Rng, n: usize) -> GrayscaleImage {
    GrayscaleImage::new(n, n, (0..n * n).map(|_| rng.random()).collect()).unwrap()
}

#[test]
fn refnet_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for head in [HeadKind::GapLinear, HeadKind::FlattenLinear] {
        for _ in 0..10 {
            let seed = rng.random();
            let n = 4 * rng.random_range(2..8);
            let classes = rng.random_range(2..6);
            let net = RefNet::new(seed, head, n, classes).unwrap();
            let class = rng.random_range(0..classes);
            let (_, feats) = net.forward(&random_image(&mut rng, n)).unwrap();
            let grads = net.feature_gradients(&feats, class).unwrap();
            let base: Vec<f64> = feats.values().iter().map(|&v| v as f64).collect();
            let eps = 1e-3;
            for i in 0..base.len() {
                let mut plus = base.clone();
                let mut minus = base.clone();
                plus[i] += eps;
                minus[i] -= eps;
                let fd = (net.scores_from_values(&plus).unwrap()[class] - net.scores_from_values(&minus).unwrap()[class])
                    / (2.0 * eps);
                assert!((fd - grads.values()[i] as f64).abs() < 1e-4, "{head:?} index {i}: {fd} vs {}", grads.values()[i]);
            }
        }
    }
}

#[test]
fn gap_head_makes_cam_methods_coincide() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let net = RefNet::new(rng.random(), HeadKind::GapLinear, 28, 3).unwrap();
        let (scores, feats) = net.forward(&random_image(&mut rng, 28)).unwrap();
        let class = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let grads = net.feature_gradients(&feats, class).unwrap();
        let gc = gradcam_raw(&feats, &grads).unwrap();
        let hc = hirescam_raw(&feats, &grads).unwrap();
        assert!(max_abs_diff(&gc.values, &hc.values) <= 1e-6);
    }
}

#[test]
fn flatten_head_makes_cam_methods_diverge() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut diverged = 0;
    for seed in 0..20u64 {
        let net = RefNet::new(seed, HeadKind::FlattenLinear, 28, 3).unwrap();
        let (_, feats) = net.forward(&random_image(&mut rng, 28)).unwrap();
        let grads = net.feature_gradients(&feats, 0).unwrap();
        let gc = gradcam_raw(&feats, &grads).unwrap();
        let hc = hirescam_raw(&feats, &grads).unwrap();
        if max_abs_diff(&gc.values, &hc.values) > 1e-3 {
            diverged += 1;
        }
    }
    assert!(diverged >= 1);
}
