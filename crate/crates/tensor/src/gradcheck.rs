//! Central finite differences for validating analytic gradients.
//!
//! Kept separate from the differentiation code path: callers supply a closure
//! that recomputes the scalar objective from scratch.

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let plus = f(&probe);
            probe[i] = x[i] - h;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps vanishing gradients from
/// turning round-off into huge relative errors.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Largest relative error over paired gradients, with its index.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> (f64, usize) {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n, floor))
        .enumerate()
        .fold((0.0, 0), |(best, bi), (i, e)| if e > best { (e, i) } else { (best, bi) })
}
