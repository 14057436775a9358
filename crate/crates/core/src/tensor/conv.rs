//! 2-D cross-correlation via im2col and `sgemm`.

use super::Tensor;
use crate::error::{Error, Result};

/// Gradients produced by [`conv2d_backward`].
#[derive(Debug, Clone)]
pub struct Conv2dGrads {
    /// `None` when the caller did not ask for the input gradient.
    pub input: Option<Tensor>,
    pub kernel: Tensor,
    pub bias: Tensor,
}

struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

fn geometry(input: &Tensor, kernel: &Tensor, padding: usize) -> Result<Geometry> {
    let (c_in, h, w) = input.dims3("conv2d")?;
    let (c_out, kc, kh, kw) = match kernel.shape()[..] {
        [a, b, c, d] => (a, b, c, d),
        _ => {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "kernel must be [C_out,C_in,kH,kW], got {:?}",
                    kernel.shape()
                ),
            ))
        }
    };
    if kc != c_in {
        return Err(Error::shape(
            "conv2d",
            format!("C_in: input has {c_in} channels but kernel expects {kc}"),
        ));
    }
    if kh > h + 2 * padding {
        return Err(Error::shape(
            "conv2d",
            format!(
                "kH: kernel height {kh} exceeds padded input height {}",
                h + 2 * padding
            ),
        ));
    }
    if kw > w + 2 * padding {
        return Err(Error::shape(
            "conv2d",
            format!(
                "kW: kernel width {kw} exceeds padded input width {}",
                w + 2 * padding
            ),
        ));
    }
    Ok(Geometry {
        c_in,
        h,
        w,
        c_out,
        kh,
        kw,
        pad: padding,
        oh: h + 2 * padding - kh + 1,
        ow: w + 2 * padding - kw + 1,
    })
}

/// Column matrix `[C_in*kH*kW, oH*oW]`.
fn im2col(x: &[f32], g: &Geometry) -> Vec<f32> {
    let n = g.oh * g.ow;
    let mut col = vec![0.0f32; g.c_in * g.kh * g.kw * n];
    for c in 0..g.c_in {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((c * g.kh + ky) * g.kw + kx) * n;
                for oy in 0..g.oh {
                    let iy = oy + ky;
                    if iy < g.pad || iy >= g.h + g.pad {
                        continue;
                    }
                    let src = (c * g.h + iy - g.pad) * g.w;
                    let dst = row + oy * g.ow;
                    // valid ox range: pad <= ox + kx < w + pad
                    let lo = g.pad.saturating_sub(kx);
                    let hi = (g.w + g.pad).saturating_sub(kx).min(g.ow);
                    if lo < hi {
                        let s0 = src + lo + kx - g.pad;
                        col[dst + lo..dst + hi].copy_from_slice(&x[s0..s0 + (hi - lo)]);
                    }
                }
            }
        }
    }
    col
}

fn col2im(col: &[f32], g: &Geometry) -> Vec<f32> {
    let n = g.oh * g.ow;
    let mut x = vec![0.0f32; g.c_in * g.h * g.w];
    for c in 0..g.c_in {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((c * g.kh + ky) * g.kw + kx) * n;
                for oy in 0..g.oh {
                    let iy = oy + ky;
                    if iy < g.pad || iy >= g.h + g.pad {
                        continue;
                    }
                    let dst = (c * g.h + iy - g.pad) * g.w;
                    let src = row + oy * g.ow;
                    let lo = g.pad.saturating_sub(kx);
                    let hi = (g.w + g.pad).saturating_sub(kx).min(g.ow);
                    for ox in lo..hi {
                        x[dst + ox + kx - g.pad] += col[src + ox];
                    }
                }
            }
        }
    }
    x
}

/// `c = alpha * op(a) * op(b) + beta * c` for row-major operands, where
/// `op(a)` is `m x k` and `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    trans_a: bool,
    b: &[f32],
    trans_b: bool,
    beta: f32,
    c: &mut [f32],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the asserts above bound every access made through the strides.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Zero-padded cross-correlation of a `[C_in,H,W]` input with a
/// `[C_out,C_in,kH,kW]` kernel, stride 1.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor, padding: usize) -> Result<Tensor> {
    let g = geometry(input, kernel, padding)?;
    if bias.len() != g.c_out {
        return Err(Error::shape(
            "conv2d",
            format!(
                "C_out: bias has {} entries, kernel has {} filters",
                bias.len(),
                g.c_out
            ),
        ));
    }
    let n = g.oh * g.ow;
    let kdim = g.c_in * g.kh * g.kw;
    let mut out = vec![0.0f32; g.c_out * n];
    for (o, &b) in bias.data().iter().enumerate() {
        out[o * n..(o + 1) * n].fill(b);
    }
    if g.kh == 1 && g.kw == 1 && g.pad == 0 {
        gemm(
            g.c_out,
            kdim,
            n,
            kernel.data(),
            false,
            input.data(),
            false,
            1.0,
            &mut out,
        );
    } else {
        let col = im2col(input.data(), &g);
        gemm(
            g.c_out,
            kdim,
            n,
            kernel.data(),
            false,
            &col,
            false,
            1.0,
            &mut out,
        );
    }
    Tensor::new(vec![g.c_out, g.oh, g.ow], out)
}

/// Gradients of [`conv2d`] given the upstream gradient `grad_out`.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    padding: usize,
    need_input_grad: bool,
) -> Result<Conv2dGrads> {
    let g = geometry(input, kernel, padding)?;
    if grad_out.shape() != [g.c_out, g.oh, g.ow] {
        return Err(Error::shape(
            "conv2d_backward",
            format!(
                "grad_out must be {:?}, got {:?}",
                [g.c_out, g.oh, g.ow],
                grad_out.shape()
            ),
        ));
    }
    let n = g.oh * g.ow;
    let kdim = g.c_in * g.kh * g.kw;
    let go = grad_out.data();

    let bias: Vec<f32> = (0..g.c_out)
        .map(|o| {
            go[o * n..(o + 1) * n]
                .iter()
                .map(|&v| v as f64)
                .sum::<f64>() as f32
        })
        .collect();

    let pointwise = g.kh == 1 && g.kw == 1 && g.pad == 0;
    let col_owned;
    let col: &[f32] = if pointwise {
        input.data()
    } else {
        col_owned = im2col(input.data(), &g);
        &col_owned
    };

    let mut gk = vec![0.0f32; g.c_out * kdim];
    gemm(g.c_out, n, kdim, go, false, col, true, 0.0, &mut gk);

    let input_grad = if need_input_grad {
        let mut gcol = vec![0.0f32; kdim * n];
        gemm(
            kdim,
            g.c_out,
            n,
            kernel.data(),
            true,
            go,
            false,
            0.0,
            &mut gcol,
        );
        let gx = if pointwise { gcol } else { col2im(&gcol, &g) };
        Some(Tensor::new(vec![g.c_in, g.h, g.w], gx)?)
    } else {
        None
    };

    Ok(Conv2dGrads {
        input: input_grad,
        kernel: Tensor::new(kernel.shape().to_vec(), gk)?,
        bias: Tensor::new(vec![g.c_out], bias)?,
    })
}
