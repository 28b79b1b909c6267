use proptest::prelude::*;

use reldrop::augment::{
    apply_random_erasing, apply_reldrop_2d, mask_with_noise, normalize_relevance_2d,
    normalize_relevance_3d, AugmentConfig2D, AugmentConfig3D, BoundaryMode, RelevanceMap2D,
};
use reldrop::lrp::{attribute, canonize, Composite};
use reldrop::metrics::{rra, top_k, GroundTruthMask};
use reldrop::nn::{build_pointnet_lite, build_small_cnn_with, Layer, Mode};
use reldrop::rng::stream;
use reldrop::Tensor;

fn relevance_map(max: usize) -> impl Strategy<Value = (usize, usize, Vec<f32>)> {
    (2..max, 2..max).prop_flat_map(|(h, w)| {
        (Just(h), Just(w), prop::collection::vec(-5.0f32..5.0, h * w))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalized_maps_stay_in_unit_interval(raw in prop::collection::vec(-1e3f32..1e3, 1..200)) {
        for v in normalize_relevance_2d(&raw).unwrap().into_iter().chain(normalize_relevance_3d(&raw).unwrap()) {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn min_max_hits_both_ends(raw in prop::collection::vec(-1e3f32..1e3, 2..200)) {
        let n = normalize_relevance_3d(&raw).unwrap();
        let lo = raw.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = raw.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        if hi > lo {
            prop_assert!(n.contains(&0.0));
            prop_assert!(n.contains(&1.0));
        }
    }

    #[test]
    fn larger_beta_drops_a_superset(
        rel in prop::collection::vec(0.0f32..=1.0, 1..300),
        seed in any::<u64>(),
        alpha in 0.0f32..=1.0,
        b1 in 0.0f32..=1.0,
        b2 in 0.0f32..=1.0,
    ) {
        use rand::Rng;
        let mut rng = stream(&[seed]);
        let noise: Vec<f32> = (0..rel.len()).map(|_| rng.random::<f32>()).collect();
        let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
        let small = mask_with_noise(&AugmentConfig3D { alpha, beta: lo }, &rel, &noise).unwrap();
        let large = mask_with_noise(&AugmentConfig3D { alpha, beta: hi }, &rel, &noise).unwrap();
        for (s, l) in small.0.iter().zip(&large.0) {
            prop_assert!(*s || !*l, "dropped at small beta but kept at large beta");
        }
    }

    #[test]
    fn reldrop_region_covers_centroid((h, w, raw) in relevance_map(40), seed in any::<u64>(), corner in any::<bool>()) {
        let cfg = AugmentConfig2D {
            p: 1.0,
            boundary: if corner { BoundaryMode::CornerFit } else { BoundaryMode::Clip },
            ..Default::default()
        };
        let map = RelevanceMap2D::new(raw, h, w).unwrap();
        let (xc, yc) = map.centroid();
        let mut image = vec![1.0f32; 2 * h * w];
        let region = apply_reldrop_2d(&mut image, &[2, h, w], &map, &cfg, &[-1.0, -2.0], &mut stream(&[seed]))
            .unwrap()
            .unwrap();
        prop_assert!(region.contains(xc, yc));
        prop_assert!(region.x1 < w && region.y1 < h);
        let occluded = image[..h * w].iter().filter(|&&v| v == -1.0).count();
        prop_assert_eq!(occluded, region.pixel_count());
        prop_assert_eq!(image[h * w..].iter().filter(|&&v| v == -2.0).count(), occluded);
    }

    #[test]
    fn p_zero_never_touches_the_image((h, w, raw) in relevance_map(20), seed in any::<u64>()) {
        let cfg = AugmentConfig2D { p: 0.0, ..Default::default() };
        let map = RelevanceMap2D::new(raw, h, w).unwrap();
        let mut image = vec![1.0f32; h * w];
        let mut rng = stream(&[seed]);
        prop_assert!(apply_reldrop_2d(&mut image, &[1, h, w], &map, &cfg, &[0.0], &mut rng).unwrap().is_none());
        prop_assert!(apply_random_erasing(&mut image, &[1, h, w], &cfg, &[0.0], &mut rng).unwrap().is_none());
        prop_assert!(image.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn random_erasing_stays_inside(h in 4usize..40, w in 4usize..40, seed in any::<u64>()) {
        let cfg = AugmentConfig2D { p: 1.0, ..Default::default() };
        let mut image = vec![1.0f32; h * w];
        let r = apply_random_erasing(&mut image, &[1, h, w], &cfg, &[0.0], &mut stream(&[seed])).unwrap().unwrap();
        prop_assert!(!r.clipped);
        prop_assert_eq!(image.iter().filter(|&&v| v == 0.0).count(), r.pixel_count());
    }

    #[test]
    fn rra_is_a_fraction_and_perfect_for_mask_shaped_maps(
        mask in prop::collection::vec(any::<bool>(), 64),
        noise in prop::collection::vec(0.0f32..0.5, 64),
    ) {
        prop_assume!(mask.iter().any(|&m| m));
        let gt = GroundTruthMask::new(8, 8, mask.clone()).unwrap();
        let r = rra(&noise, &gt).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
        let aligned: Vec<f32> = mask.iter().zip(&noise).map(|(&m, &n)| if m { 1.0 + n } else { n }).collect();
        prop_assert_eq!(rra(&aligned, &gt).unwrap(), 1.0);
    }

    #[test]
    fn top_k_is_sorted_and_unique(values in prop::collection::vec(-3i8..3, 1..100), k in 0usize..120) {
        let values: Vec<f32> = values.into_iter().map(f32::from).collect();
        let idx = top_k(&values, k);
        prop_assert_eq!(idx.len(), k.min(values.len()));
        for pair in idx.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            prop_assert!(values[a] > values[b] || (values[a] == values[b] && a < b));
        }
    }

    #[test]
    fn canonized_cnn_matches_eval_forward(seed in any::<u64>(), side in 8usize..14) {
        use rand::Rng;
        let mut rng = stream(&[seed, 1]);
        let mut net = build_small_cnn_with([1, side, side], 3, [3, 4], seed).unwrap();
        for layer in net.layers_mut() {
            if let Layer::BatchNorm2d(bn) = layer {
                for c in 0..bn.channels {
                    bn.gamma[c] = rng.random_range(0.5..1.5);
                    bn.beta[c] = rng.random_range(-0.3..0.3);
                    bn.running_mean[c] = rng.random_range(-0.3..0.3);
                    bn.running_var[c] = rng.random_range(0.5..2.0);
                }
            }
        }
        let x = Tensor::from_fn(&[2, 1, side, side], |_| rng.random_range(-1.0..1.0));
        let a = net.forward(&x, Mode::Eval).unwrap().logits;
        let b = canonize(&net).unwrap().logits(&x).unwrap();
        prop_assert!(a.max_abs_diff(&b) <= 1e-5);
    }
}

#[test]
fn pointnet_is_permutation_invariant() {
    use rand::seq::SliceRandom;
    let net = build_pointnet_lite(128, 4, 7).unwrap();
    let x = Tensor::from_fn(&[1, 128, 3], |i| ((i * 7919 % 257) as f32 / 128.0) - 1.0);
    let mut perm: Vec<usize> = (0..128).collect();
    perm.shuffle(&mut stream(&[3]));
    let mut permuted = vec![0.0f32; x.len()];
    for (dst, &src) in perm.iter().enumerate() {
        permuted[dst * 3..dst * 3 + 3].copy_from_slice(&x.data()[src * 3..src * 3 + 3]);
    }
    let y = Tensor::new(vec![1, 128, 3], permuted).unwrap();
    assert!(net.logits(&x).unwrap().max_abs_diff(&net.logits(&y).unwrap()) <= 1e-5);

    // Point relevance moves with the points.
    let c = Composite::evaluation();
    let rx = attribute(&net, &x, &[1], &c).unwrap().point_relevance().unwrap();
    let ry = attribute(&net, &y, &[1], &c).unwrap().point_relevance().unwrap();
    for (dst, &src) in perm.iter().enumerate() {
        assert!((ry.data()[dst] - rx.data()[src]).abs() <= 1e-5);
    }
}
