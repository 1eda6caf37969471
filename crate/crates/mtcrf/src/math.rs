//! Log-domain numeric helpers shared by the inference routines.

/// Numerically stable `ln(exp(a) + exp(b))`.
#[inline]
pub fn logsumexp2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY && b == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// Stable log-sum-exp over a slice. Empty input yields negative infinity.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Anything whose parameters can round-trip through one flat vector.
///
/// The flat order is fixed per implementation, so the same index always
/// addresses the same scalar. That single contract powers the optimizer,
/// global-norm clipping, and finite-difference gradient checks.
pub trait FlatParams {
    fn to_flat(&self) -> Vec<f64>;
    /// Panics if `flat` has the wrong length.
    fn assign_flat(&mut self, flat: &[f64]);
}

/// Central-difference gradient of `loss` at the current parameters,
/// one coordinate at a time. Restores the parameters afterwards.
pub fn central_difference<P: FlatParams>(
    params: &mut P,
    mut loss: impl FnMut(&P) -> f64,
    h: f64,
) -> Vec<f64> {
    let base = params.to_flat();
    let mut grad = Vec::with_capacity(base.len());
    let mut work = base.clone();
    for i in 0..base.len() {
        work[i] = base[i] + h;
        params.assign_flat(&work);
        let up = loss(params);
        work[i] = base[i] - h;
        params.assign_flat(&work);
        let down = loss(params);
        work[i] = base[i];
        grad.push((up - down) / (2.0 * h));
    }
    params.assign_flat(&base);
    grad
}

/// Largest relative error between an analytic gradient and its
/// central-difference estimate, guarded against near-zero denominators.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(g, cd)| (g - cd).abs() / (cd.abs() + 1e-8))
        .fold(0.0, f64::max)
}
