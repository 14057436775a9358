use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Whether stochastic layers are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Max pooling with square `window` and `stride`. Returns the pooled tensor
/// and, per output cell, the flat input index that won. Ties go to the lowest
/// flat index.
pub fn maxpool(input: &Tensor, window: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = input.dims3("maxpool")?;
    if window == 0 || stride == 0 {
        return Err(Error::InvalidArgument(
            "maxpool window and stride must be >= 1".into(),
        ));
    }
    if window > h || window > w {
        return Err(Error::shape(
            "maxpool",
            format!("window {window} larger than input {h}x{w}"),
        ));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_i = usize::MAX;
                for ky in 0..window {
                    let row = (ch * h + oy * stride + ky) * w + ox * stride;
                    for (kx, &v) in x[row..row + window].iter().enumerate() {
                        if v > best || best_i == usize::MAX {
                            best = v;
                            best_i = row + kx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    Ok((Tensor::new(vec![c, oh, ow], out)?, arg))
}

pub fn maxpool_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut g = Tensor::zeros(input_shape);
    let gd = g.data_mut();
    for (&i, &v) in argmax.iter().zip(grad_out.data()) {
        gd[i] += v;
    }
    g
}

/// Per-channel spatial mean of a `[C,H,W]` tensor.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.dims3("global_avg_pool")?;
    let n = h * w;
    let out = input
        .data()
        .chunks_exact(n)
        .map(|ch| (ch.iter().map(|&v| v as f64).sum::<f64>() / n as f64) as f32)
        .collect();
    Tensor::new(vec![c], out)
}

pub fn global_avg_pool_backward(input_shape: &[usize], grad_out: &Tensor) -> Tensor {
    let n = input_shape[1] * input_shape[2];
    let scale = 1.0 / n as f32;
    let data = grad_out
        .data()
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g * scale, n))
        .collect();
    Tensor::new(input_shape.to_vec(), data).expect("shape from input")
}

/// `out[k] = bias[k] + sum_d weights[k,d] * input[d]`.
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (k, d) = match weights.shape()[..] {
        [k, d] => (k, d),
        _ => {
            return Err(Error::shape(
                "dense",
                format!("weights must be [K,D], got {:?}", weights.shape()),
            ))
        }
    };
    if input.len() != d {
        return Err(Error::shape(
            "dense",
            format!("D: input has {} values, weights expect {d}", input.len()),
        ));
    }
    if bias.len() != k {
        return Err(Error::shape(
            "dense",
            format!("K: bias has {} values, weights have {k} rows", bias.len()),
        ));
    }
    let x = input.data();
    let out = weights
        .data()
        .chunks_exact(d)
        .zip(bias.data())
        .map(|(row, &b)| {
            let dot: f64 = row.iter().zip(x).map(|(&w, &v)| w as f64 * v as f64).sum();
            (b as f64 + dot) as f32
        })
        .collect();
    Tensor::new(vec![k], out)
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn dense_backward(input: &Tensor, weights: &Tensor, grad_out: &Tensor) -> DenseGrads {
    let (k, d) = (weights.shape()[0], weights.shape()[1]);
    let x = input.data();
    let go = grad_out.data();
    let mut gw = Vec::with_capacity(k * d);
    for &g in go {
        gw.extend(x.iter().map(|&v| g * v));
    }
    let gx = (0..d)
        .map(|j| {
            (0..k)
                .map(|i| weights.data()[i * d + j] as f64 * go[i] as f64)
                .sum::<f64>() as f32
        })
        .collect();
    DenseGrads {
        input: Tensor::new(input.shape().to_vec(), gx).expect("input shape"),
        weights: Tensor::new(vec![k, d], gw).expect("weight shape"),
        bias: grad_out.clone().reshape(vec![k]).expect("bias shape"),
    }
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Gradient through ReLU, gated on the forward *output*.
pub fn relu_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| if y > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(output.shape().to_vec(), data).expect("same shape")
}

pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverted dropout. Returns the output and the 0/1 keep mask.
pub fn dropout<R: Rng + ?Sized>(
    input: &Tensor,
    rate: f32,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor, Tensor)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate must be in [0,1), got {rate}"
        )));
    }
    let ones = Tensor::filled(input.shape(), 1.0);
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((input.clone(), ones));
    }
    let scale = 1.0 / (1.0 - rate);
    let mut mask = ones;
    let mut out = input.clone();
    for (m, o) in mask.data_mut().iter_mut().zip(out.data_mut()) {
        if rng.random::<f32>() < rate {
            *m = 0.0;
            *o = 0.0;
        } else {
            *o *= scale;
        }
    }
    Ok((out, mask))
}

pub fn dropout_backward(grad_out: &Tensor, mask: &Tensor, rate: f32) -> Tensor {
    let scale = 1.0 / (1.0 - rate);
    let data = grad_out
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&g, &m)| g * m * scale)
        .collect();
    Tensor::new(grad_out.shape().to_vec(), data).expect("same shape")
}

/// Numerically stable softmax, computed in `f64`.
pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
    let exps: Vec<f64> = logits.iter().map(|&z| (z as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone)]
pub struct SoftmaxCe {
    pub loss: f64,
    pub probabilities: Tensor,
    /// `probabilities - one_hot(label)`.
    pub grad: Tensor,
}

pub fn softmax_ce(logits: &Tensor, label: usize) -> Result<SoftmaxCe> {
    let k = logits.len();
    if label >= k {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {k} classes"
        )));
    }
    let z = logits.data();
    let max = z.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
    let lse = z.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln() + max;
    let probs = softmax(z);
    let loss = lse - z[label] as f64;
    let grad = probs
        .iter()
        .enumerate()
        .map(|(i, &p)| (p - if i == label { 1.0 } else { 0.0 }) as f32)
        .collect();
    Ok(SoftmaxCe {
        loss,
        probabilities: Tensor::new(vec![k], probs.iter().map(|&p| p as f32).collect())?,
        grad: Tensor::new(vec![k], grad)?,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn maxpool_constant() {
        let x = Tensor::filled(&[2, 4, 4], 3.5);
        let (y, _) = maxpool(&x, 2, 2).unwrap();
        assert!(y.data().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn maxpool_single_window() {
        let (y, arg) = maxpool(&t(&[1, 2, 2], &[1., 2., 3., 4.]), 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
    }

    #[test]
    fn maxpool_hand_enumeration() {
        let mut x = Tensor::zeros(&[1, 4, 4]);
        x.set3(0, 1, 2, 9.0);
        let (y, _) = maxpool(&x, 2, 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[0., 9., 0., 0.]);
    }

    #[test]
    fn maxpool_ties_take_lowest_index() {
        let (_, arg) = maxpool(&Tensor::filled(&[1, 2, 2], 1.0), 2, 2).unwrap();
        assert_eq!(arg, vec![0]);
        let g = maxpool_backward(&[1, 2, 2], &arg, &t(&[1, 1, 1], &[5.0]));
        assert_eq!(g.data(), &[5., 0., 0., 0.]);
    }

    #[test]
    fn maxpool_rejects_large_window() {
        assert!(maxpool(&Tensor::zeros(&[1, 3, 3]), 4, 1).is_err());
    }

    #[test]
    fn gap_examples() {
        assert_eq!(
            global_avg_pool(&Tensor::filled(&[1, 3, 2], 2.5))
                .unwrap()
                .data(),
            &[2.5]
        );
        let y = global_avg_pool(&t(&[2, 2, 2], &[0., 2., 4., 6., 0., 0., 0., 0.])).unwrap();
        assert_eq!(y.data(), &[3.0, 0.0]);
    }

    #[test]
    fn dense_examples() {
        let eye = t(&[2, 2], &[1., 0., 0., 1.]);
        let x = t(&[2], &[2., 3.]);
        assert_eq!(dense(&x, &eye, &Tensor::zeros(&[2])).unwrap(), x);
        let y = dense(&x, &t(&[1, 2], &[1., 1.]), &t(&[1], &[1.])).unwrap();
        assert_eq!(y.data(), &[6.0]);
        let y = dense(&x, &Tensor::zeros(&[2, 2]), &t(&[2], &[-1., 4.])).unwrap();
        assert_eq!(y.data(), &[-1.0, 4.0]);
        assert!(dense(&t(&[3], &[1., 2., 3.]), &eye, &Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = t(&[4], &[1., -2., 3., 0.5]);
        let (y, m) = dropout(&x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(m.data().iter().all(|&v| v == 1.0));
        let (y, _) = dropout(&x, 0.5, Mode::Eval, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(dropout(&x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_rate_is_binomial() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = Tensor::filled(&[100_000], 1.0);
        let (y, _) = dropout(&x, 0.1, Mode::Train, &mut rng).unwrap();
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / 1e5;
        assert!((zeros - 0.1).abs() < 0.005, "{zeros}");
        let survivor = y.data().iter().find(|&&v| v != 0.0).unwrap();
        assert!((survivor - 1.0 / 0.9).abs() < 1e-6);
    }

    #[test]
    fn softmax_ce_uniform() {
        let r = softmax_ce(&Tensor::filled(&[5], 0.7), 3).unwrap();
        assert!((r.loss - 5f64.ln()).abs() < 1e-12);
        for &p in r.probabilities.data() {
            assert!((p - 0.2).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_ce_saturated() {
        let r = softmax_ce(&t(&[2], &[1000., 0.]), 0).unwrap();
        assert!(r.loss.abs() < 1e-12);
        assert_eq!(r.probabilities.data(), &[1.0, 0.0]);
        assert!(r.grad.all_finite());
    }

    #[test]
    fn softmax_ce_matches_direct_formula() {
        // Evaluate exp/sum directly, without max-subtraction.
        let z = [1.0f64, 2.0, 3.0];
        let s: f64 = z.iter().map(|v| v.exp()).sum();
        let expect: Vec<f64> = z.iter().map(|v| v.exp() / s).collect();
        let r = softmax_ce(&t(&[3], &[1., 2., 3.]), 2).unwrap();
        for (p, e) in r.probabilities.data().iter().zip(&expect) {
            assert!((*p as f64 - e).abs() < 1e-7);
        }
        assert!((r.loss - (-expect[2].ln())).abs() < 1e-12);
        // 0.40760596444 = -ln(e^3 / (e + e^2 + e^3))
        assert!((r.loss - 0.407_605_964_44).abs() < 1e-9);
        let gsum: f32 = r.grad.data().iter().sum();
        assert!(gsum.abs() < 1e-6);
    }

    #[test]
    fn softmax_ce_rejects_label() {
        assert!(softmax_ce(&Tensor::zeros(&[3]), 3).is_err());
    }
}
