use occbench::baselines::{bow_input, bow_predict, BowHead, ContextFreeDetector};
use occbench::compstage::{
    bin_range, normalize_part_maps, spp_pool, stage2_forward, SppConfig, Stage2Head,
};
use occbench::partstage::{
    encode_subparts, PartMap, SpatialDetector, SubpartDict, SubpartMap, VOTING_SIZE,
};
use occbench::rng::stream;
use occbench::tensor::{Mode, Tensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

const P: usize = 6;

fn random_tensor(shape: &[usize], seed: u64, lo: f32, hi: f32) -> Tensor {
    let mut rng = stream(seed, "composition-props", 0);
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

fn part_map(seed: u64, h: usize, w: usize) -> PartMap {
    PartMap {
        scores: random_tensor(&[P, h, w], seed, 0.0, 1.0),
        stride: 4,
    }
}

fn random_head(seed: u64, len: usize) -> Stage2Head {
    Stage2Head::from_parts(
        0.1,
        random_tensor(&[5, len], seed, -1.0, 1.0),
        random_tensor(&[5], seed + 1, -1.0, 1.0),
    )
    .unwrap()
}

fn subpart_map(seed: u64, k: usize, h: usize, w: usize) -> SubpartMap {
    SubpartMap {
        responses: random_tensor(&[k, h, w], seed, 0.0, 1.0),
        stride: 4,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn spp_length_is_21_per_part(seed in 0u64..1000, h in 4usize..20, w in 4usize..20) {
        let v = spp_pool(&part_map(seed, h, w).scores, &SppConfig::default()).unwrap();
        prop_assert_eq!(v.len(), 21 * P);
    }

    #[test]
    fn spp_entries_are_bin_maxima(seed in 0u64..1000, h in 4usize..16, w in 4usize..16) {
        let m = part_map(seed, h, w).scores;
        let cfg = SppConfig::default();
        let v = spp_pool(&m, &cfg).unwrap();
        let mut i = 0;
        for &n in &cfg.scales {
            for c in 0..P {
                for by in 0..n {
                    for bx in 0..n {
                        let expect = bin_range(by, n, h)
                            .flat_map(|y| bin_range(bx, n, w).map(move |x| (y, x)))
                            .map(|(y, x)| m.at3(c, y, x))
                            .fold(f32::NEG_INFINITY, f32::max);
                        prop_assert_eq!(v.data()[i], expect);
                        i += 1;
                    }
                }
            }
        }
    }

    #[test]
    fn spp_invariant_to_permutation_within_finest_bin(seed in 0u64..1000, h in 4usize..16, w in 4usize..16, by in 0usize..4, bx in 0usize..4, c in 0usize..P) {
        let m = part_map(seed, h, w).scores;
        let cells: Vec<(usize, usize)> = bin_range(by, 4, h)
            .flat_map(|y| bin_range(bx, 4, w).map(move |x| (y, x)))
            .collect();
        let mut vals: Vec<f32> = cells.iter().map(|&(y, x)| m.at3(c, y, x)).collect();
        vals.shuffle(&mut stream(seed, "perm", 0));
        let mut permuted = m.clone();
        for (&(y, x), &v) in cells.iter().zip(&vals) {
            permuted.set3(c, y, x, v);
        }
        let cfg = SppConfig::default();
        prop_assert_eq!(spp_pool(&m, &cfg).unwrap(), spp_pool(&permuted, &cfg).unwrap());
    }

    #[test]
    fn spp_is_monotone(seed in 0u64..1000, h in 4usize..16, w in 4usize..16) {
        let m = part_map(seed, h, w).scores;
        let bump = random_tensor(&[P, h, w], seed + 3, 0.0, 0.5);
        let raised = Tensor::new(m.shape().to_vec(), m.data().iter().zip(bump.data()).map(|(a, b)| a + b).collect()).unwrap();
        let cfg = SppConfig::default();
        let (lo, hi) = (spp_pool(&m, &cfg).unwrap(), spp_pool(&raised, &cfg).unwrap());
        prop_assert!(lo.data().iter().zip(hi.data()).all(|(a, b)| b >= a));
    }

    #[test]
    fn normalized_maps_lie_in_unit_interval_and_are_idempotent(seed in 0u64..1000, scale in 0.1f32..5.0) {
        let mut m = part_map(seed, 8, 8);
        m.scores = m.scores.map(|v| v * scale);
        let once = normalize_part_maps(&m).unwrap();
        prop_assert!(once.scores.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert_eq!(normalize_part_maps(&once).unwrap(), once);
    }

    #[test]
    fn eval_passes_are_bit_identical(seed in 0u64..1000) {
        let v = spp_pool(&part_map(seed, 12, 12).scores, &SppConfig::default()).unwrap();
        let head = random_head(seed, v.len());
        let a = head.eval_logits(&v).unwrap();
        let b = head.logits(&v, Mode::Eval, &mut stream(seed, "unused", 0)).unwrap();
        prop_assert_eq!(a.clone(), b);
        prop_assert_eq!(a, head.eval_logits(&v).unwrap());
        let p = stage2_forward(&v, &head, Mode::Eval, &mut stream(seed, "unused", 1)).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn deleting_detections_bounded_by_weighted_entry_change(seed in 0u64..1000, y0 in 0usize..8, x0 in 0usize..8) {
        let m = part_map(seed, 12, 12);
        let mut occluded = m.clone();
        for c in 0..P {
            for y in y0..y0 + 4 {
                for x in x0..x0 + 4 {
                    occluded.scores.set3(c, y, x, 0.0);
                }
            }
        }
        let cfg = SppConfig::default();
        let (a, b) = (spp_pool(&m.scores, &cfg).unwrap(), spp_pool(&occluded.scores, &cfg).unwrap());
        let head = random_head(seed, a.len());
        let (la, lb) = (head.eval_logits(&a).unwrap(), head.eval_logits(&b).unwrap());
        let wts = head.weights().data();
        for k in 0..5 {
            let bound: f64 = (0..a.len())
                .map(|j| (wts[k * a.len() + j] as f64).abs() * (a.data()[j] - b.data()[j]).abs() as f64)
                .sum();
            let delta = (la.data()[k] - lb.data()[k]).abs() as f64;
            prop_assert!(delta <= bound + 1e-5, "logit {k}: {delta} > {bound}");
        }
    }

    #[test]
    fn bow_input_is_global_max_block(seed in 0u64..1000, h in 4usize..16, w in 4usize..16) {
        let m = part_map(seed, h, w);
        let bow = bow_input(&m).unwrap();
        let cfg = SppConfig::default();
        let spp = spp_pool(&normalize_part_maps(&m).unwrap().scores, &cfg).unwrap();
        let off = cfg.block_offset(2, P);
        prop_assert_eq!(bow.data(), &spp.data()[off..off + P]);
    }

    #[test]
    fn bow_prediction_ignores_spatial_permutation(seed in 0u64..1000) {
        let m = part_map(seed, 10, 10);
        let mut shuffled = m.clone();
        let mut rng = stream(seed, "bow-perm", 0);
        for c in 0..P {
            let mut vals: Vec<f32> = m.scores.data()[c * 100..(c + 1) * 100].to_vec();
            vals.shuffle(&mut rng);
            shuffled.scores.data_mut()[c * 100..(c + 1) * 100].copy_from_slice(&vals);
        }
        let head = BowHead::new(random_head(seed, P));
        prop_assert_eq!(bow_predict(&m, &head).unwrap(), bow_predict(&shuffled, &head).unwrap());
    }

    #[test]
    fn voting_sees_only_a_15x15_window(seed in 0u64..1000, y in 0usize..20, x in 0usize..20) {
        let det = SpatialDetector::from_parts(
            random_tensor(&[3, 4, VOTING_SIZE, VOTING_SIZE], seed, -1.0, 1.0),
            random_tensor(&[3], seed + 1, -1.0, 1.0),
        ).unwrap();
        let map = subpart_map(seed + 2, 4, 20, 20);
        let mut windowed = map.clone();
        let r = VOTING_SIZE / 2;
        for c in 0..4 {
            for yy in 0usize..20 {
                for xx in 0usize..20 {
                    if yy.abs_diff(y) > r || xx.abs_diff(x) > r {
                        windowed.responses.set3(c, yy, xx, 0.0);
                    }
                }
            }
        }
        let (a, b) = (det.detect(&map).unwrap(), det.detect(&windowed).unwrap());
        for p in 0..3 {
            prop_assert_eq!(a.scores.at3(p, y, x), b.scores.at3(p, y, x));
        }
    }

    #[test]
    fn context_free_detector_is_pointwise(seed in 0u64..1000, y in 0usize..12, x in 0usize..12) {
        let det = ContextFreeDetector::new(SpatialDetector::from_parts(
            random_tensor(&[3, 4, 1, 1], seed, -1.0, 1.0),
            random_tensor(&[3], seed + 1, -1.0, 1.0),
        ).unwrap()).unwrap();
        let map = subpart_map(seed + 2, 4, 12, 12);
        let mut only = SubpartMap { responses: Tensor::zeros(&[4, 12, 12]), stride: 4 };
        for c in 0..4 {
            only.responses.set3(c, y, x, map.responses.at3(c, y, x));
        }
        let (a, b) = (det.detect(&map).unwrap(), det.detect(&only).unwrap());
        for p in 0..3 {
            prop_assert_eq!(a.scores.at3(p, y, x), b.scores.at3(p, y, x));
        }
    }

    #[test]
    fn soft_assignments_sum_to_one(seed in 0u64..1000, k in 2usize..12) {
        let raw = random_tensor(&[k, 8], seed, -1.0, 1.0);
        let unit: Vec<f32> = raw
            .data()
            .chunks(8)
            .flat_map(|r| {
                let n = r.iter().map(|v| v * v).sum::<f32>().sqrt();
                r.iter().map(move |v| v / n)
            })
            .collect();
        let dict = SubpartDict::new(Tensor::new(vec![k, 8], unit).unwrap(), "probe", 0.1).unwrap();
        let features = random_tensor(&[8, 6, 7], seed + 1, 0.0, 2.0);
        let map = encode_subparts(&features, &dict, 4).unwrap();
        for i in 0..42 {
            let s: f64 = (0..k).map(|c| map.responses.data()[c * 42 + i] as f64).sum();
            prop_assert!((s - 1.0).abs() < 1e-5);
        }
    }
}
