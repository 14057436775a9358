use occbench::rng::stream;
use occbench::synthgen::{
    make_scene, occlusion_ratio, place_occluders, test_variants, train_scene, DataConfig,
    OccluderStyle, SplitCounts, RATIO_TOLERANCE,
};
use occbench::NUM_CATEGORIES;
use proptest::prelude::*;

fn small_config(seed: u64) -> DataConfig {
    DataConfig {
        counts: SplitCounts {
            train: 10,
            test: 10,
        },
        canvas: 96,
        seed,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn achieved_ratio_tracks_request(seed in 0u64..10_000, cat in 0usize..NUM_CATEGORIES, ratio in 0.2f64..0.8, masked in any::<bool>()) {
        let mut rng = stream(seed, "synthgen-props", 0);
        let clean = make_scene("p", cat, &mut rng, 96, 96).unwrap();
        let style = if masked { OccluderStyle::ConstantMask } else { OccluderStyle::Textured };
        let occ = place_occluders(&clean, ratio, style, &mut rng).unwrap();
        prop_assert!((occ.occlusion_ratio - ratio).abs() <= RATIO_TOLERANCE);
        prop_assert_eq!(occ.occlusion_ratio, occlusion_ratio(&occ.target_mask, &occ.occluder_union()));
        prop_assert_eq!(occ.without_occluders().image, clean.image);
    }

    #[test]
    fn parts_stay_inside_object_box(seed in 0u64..10_000, cat in 0usize..NUM_CATEGORIES) {
        let mut rng = stream(seed, "synthgen-props", 1);
        let s = make_scene("p", cat, &mut rng, 96, 96).unwrap();
        let [x0, y0, x1, y1] = s.object_box;
        let eps = 1e-3;
        for p in &s.parts {
            prop_assert!(p.cx - p.w / 2.0 >= x0 - eps && p.cx + p.w / 2.0 <= x1 + eps);
            prop_assert!(p.cy - p.h / 2.0 >= y0 - eps && p.cy + p.h / 2.0 <= y1 + eps);
        }
    }

    #[test]
    fn scenes_are_pure_functions_of_config(seed in 0u64..10_000, i in 0usize..10) {
        let cfg = small_config(seed);
        let a = test_variants(&cfg, i).unwrap();
        let b = test_variants(&cfg, i).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(&x.image, &y.image);
            prop_assert_eq!(x.occlusion_ratio, y.occlusion_ratio);
        }
        let t = train_scene(&cfg, i).unwrap();
        prop_assert!(t.occluders.is_empty());
        prop_assert_eq!(t.occlusion_ratio, 0.0);
    }
}
