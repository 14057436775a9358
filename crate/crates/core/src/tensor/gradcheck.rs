/// Worst coordinate-wise relative error between `analytic` and central
/// differences `(f(x+eps) - f(x-eps)) / 2eps` of the scalar function `f`.
///
/// The denominator of each relative error is floored at 1% of the largest
/// gradient magnitude, so coordinates whose true derivative is near zero
/// are judged against the gradient's overall scale. If both gradients are
/// identically zero the result is 0.
pub fn finite_diff_check<F>(mut f: F, point: &[f32], analytic: &[f32], eps: f32) -> f64
where
    F: FnMut(&[f32]) -> f64,
{
    assert_eq!(
        point.len(),
        analytic.len(),
        "gradient length must match point"
    );
    let mut x = point.to_vec();
    let mut numeric = Vec::with_capacity(point.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let plus = f(&x);
        x[i] = orig - eps;
        let minus = f(&x);
        x[i] = orig;
        // use the step actually representable in f32
        let h = ((orig + eps) as f64) - ((orig - eps) as f64);
        numeric.push((plus - minus) / h);
    }
    let scale = analytic
        .iter()
        .map(|&a| (a as f64).abs())
        .chain(numeric.iter().map(|n| n.abs()))
        .fold(0.0f64, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| {
            let a = a as f64;
            (a - n).abs() / a.abs().max(n.abs()).max(1e-2 * scale)
        })
        .fold(0.0, f64::max)
}
