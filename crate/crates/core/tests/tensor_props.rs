use occbench::rng::stream;
use occbench::tensor::{conv2d, softmax, Checkpoint, LayerParams, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = stream(seed, "tensor-props", 0);
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0f32)).collect(),
    )
    .unwrap()
}

/// Places `src` `[C,h,w]` into a zero `[C,H,W]` canvas at offset `(dy,dx)`.
fn embed(src: &Tensor, big_h: usize, big_w: usize, dy: usize, dx: usize) -> Tensor {
    let (c, h, w) = src.dims3("embed").unwrap();
    let mut out = Tensor::zeros(&[c, big_h, big_w]);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out.set3(ch, y + dy, x + dx, src.at3(ch, y, x));
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv_is_translation_equivariant(seed in 0u64..1000, dy in 0usize..4, dx in 0usize..4, k in prop::sample::select(vec![1usize, 3, 5])) {
        let content = random_tensor(&[2, 10, 10], seed);
        let kernel = random_tensor(&[3, 2, k, k], seed + 1);
        let bias = random_tensor(&[3], seed + 2);
        let pad = k / 2;
        let a = conv2d(&embed(&content, 16, 16, 1, 1), &kernel, &bias, pad).unwrap();
        let b = conv2d(&embed(&content, 16, 16, 1 + dy, 1 + dx), &kernel, &bias, pad).unwrap();
        // interior cells whose windows stay inside both canvases
        for c in 0..3 {
            for y in pad..(16 - pad - dy) {
                for x in pad..(16 - pad - dx) {
                    prop_assert_eq!(a.at3(c, y, x), b.at3(c, y + dy, x + dx));
                }
            }
        }
    }

    #[test]
    fn softmax_sums_to_one_for_large_logits(logits in prop::collection::vec(-1e4f32..1e4, 2..12)) {
        let p = softmax(&logits);
        let s: f64 = p.iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-6);
        prop_assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn checkpoint_save_load_save_is_byte_identical(seed in 0u64..1000, a in 1usize..6, b in 1usize..6) {
        let mut params = LayerParams::new();
        params.insert("w", random_tensor(&[a, b], seed)).unwrap();
        params.insert("b", random_tensor(&[b], seed + 7)).unwrap();
        let ck = Checkpoint::new(params).with_meta("model", "probe");
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        ck.save(&p1).unwrap();
        let back = Checkpoint::load(&p1).unwrap();
        back.save(&p2).unwrap();
        prop_assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        prop_assert_eq!(back, ck);
    }
}
