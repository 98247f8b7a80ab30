mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use texfx_core::dataset::{augment_style, distance_maps, preprocess_mask, test_count, Colormap};
use texfx_core::eval::{psnr, ssim};

fn mask_strategy() -> impl Strategy<Value = (Vec<bool>, usize, usize)> {
    (2usize..=16, 2usize..=16).prop_flat_map(|(h, w)| {
        proptest::collection::vec(any::<bool>(), h * w)
            .prop_filter("both classes", |m| m.iter().any(|&b| b) && m.iter().any(|&b| !b))
            .prop_map(move |m| (m, h, w))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distance_planes_are_one_lipschitz((mask, h, w) in mask_strategy()) {
        let maps = distance_maps(&mask, h, w).unwrap();
        for p in 0..h * w {
            for q in p + 1..h * w {
                let dy = (p / w) as f64 - (q / w) as f64;
                let dx = (p % w) as f64 - (q % w) as f64;
                let d = (dy * dy + dx * dx).sqrt() + 1e-12;
                prop_assert!((maps.to_background[p] - maps.to_background[q]).abs() <= d);
                prop_assert!((maps.to_foreground[p] - maps.to_foreground[q]).abs() <= d);
            }
        }
    }

    #[test]
    fn distance_planes_match_oracle((mask, h, w) in mask_strategy()) {
        let maps = distance_maps(&mask, h, w).unwrap();
        let (bg, fg) = common::brute_distances(&mask, h, w);
        prop_assert_eq!(maps.to_background, bg);
        prop_assert_eq!(maps.to_foreground, fg);
    }

    #[test]
    fn glyph_planes_satisfy_invariants((mask, h, w) in mask_strategy()) {
        let g = preprocess_mask(&mask, h, w).unwrap();
        prop_assert!(g.check_invariants().is_ok());
        for i in 0..h * w {
            prop_assert!(!(g.0.plane(1)[i] > 0.0 && g.0.plane(2)[i] > 0.0));
        }
    }

    #[test]
    fn effects_color_each_class_with_its_own_map((mask, h, w) in mask_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fg = Colormap::random(&mut rng, 4);
        let bg = Colormap::random(&mut rng, 4);
        let g = preprocess_mask(&mask, h, w).unwrap();
        let out = augment_style(&g, &fg, &bg);
        for y in 0..h {
            for x in 0..w {
                let expect = if g.0.get(0, y, x) == 1.0 {
                    fg.eval(g.0.get(1, y, x))
                } else {
                    bg.eval(g.0.get(2, y, x))
                };
                prop_assert_eq!(out.pixel(y, x), expect);
            }
        }
    }

    #[test]
    fn split_is_within_one_item(n in 4usize..200) {
        let test = test_count(n) as f64;
        prop_assert!((test - 0.13 * n as f64).abs() <= 1.0);
        prop_assert!(n - test_count(n) >= 2);
    }

    #[test]
    fn metrics_are_symmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = common::random_image(&mut rng, 12, 12);
        let b = common::random_image(&mut rng, 12, 12);
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn colormaps_interpolate_between_control_points(seed in any::<u64>(), t in 0f32..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map = Colormap::random(&mut rng, 4);
        let pts = map.points();
        prop_assert_eq!(pts[0].0, 0.0);
        prop_assert_eq!(pts[pts.len() - 1].0, 1.0);
        prop_assert!(pts.windows(2).all(|w| w[0].0 < w[1].0));
        let c = map.eval(t);
        let seg = pts.windows(2).find(|w| t <= w[1].0).unwrap();
        for k in 0..3 {
            let (lo, hi) = (seg[0].1[k].min(seg[1].1[k]), seg[0].1[k].max(seg[1].1[k]));
            prop_assert!(c[k] >= lo - 1e-6 && c[k] <= hi + 1e-6);
        }
    }
}

#[test]
fn per_style_split_counts() {
    let dir = tempfile::tempdir().unwrap();
    let m = texfx_core::dataset::synth_dataset(3, 15, 16, 2, dir.path()).unwrap();
    let mut per_style: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for e in &m.entries {
        let c = per_style.entry(&e.style_id).or_default();
        match e.split {
            texfx_core::dataset::Split::Train => c.0 += 1,
            texfx_core::dataset::Split::Test => c.1 += 1,
        }
    }
    for (_, (train, test)) in per_style {
        assert_eq!(train + test, 15);
        assert!((test as f64 - 0.13 * 15.0).abs() <= 1.0);
    }
}
