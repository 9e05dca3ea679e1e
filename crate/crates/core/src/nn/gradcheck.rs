//! Central finite differences for checking hand-written backward passes.

/// Step used by [`grad_check`].
pub const STEP: f64 = 1e-5;

/// Denominator floor so entries whose true gradient is zero are judged on
/// absolute rounding noise rather than dividing by nothing.
pub const REL_FLOOR: f64 = 1e-4;

pub fn numerical_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    (0..x.len())
        .map(|i| {
            xs[i] = x[i] + h;
            let up = f(&xs);
            xs[i] = x[i] - h;
            let down = f(&xs);
            xs[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max |a - n| / max(|a|, |n|, REL_FLOOR)` over all entries.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
        .fold(0.0, f64::max)
}

/// Worst relative error between `analytic` and central differences of `f` at `x`.
pub fn grad_check(f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64]) -> f64 {
    max_relative_error(analytic, &numerical_gradient(f, x, STEP))
}
