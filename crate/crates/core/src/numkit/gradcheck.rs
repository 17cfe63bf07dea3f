//! Central finite differences, kept independent of the tape so it can serve
//! as an oracle for it.

use super::params::ParamStore;

/// Central difference of `f` at `x` in every coordinate.
pub fn central_differences<F>(x: &[f64], step: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Relative error used throughout the gradient checks:
/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest [`relative_error`] over a pair of gradient vectors.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n, floor))
        .fold(0.0, f64::max)
}

/// Finite-difference gradient of `loss` with respect to each parameter block.
pub fn param_differences<F>(params: &ParamStore, step: f64, mut loss: F) -> Vec<Vec<f64>>
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut probe = params.clone();
    params
        .ids()
        .map(|id| {
            let n = params.get(id).len();
            (0..n)
                .map(|i| {
                    let orig = probe.get(id).data()[i];
                    probe.get_mut(id).data_mut()[i] = orig + step;
                    let up = loss(&probe);
                    probe.get_mut(id).data_mut()[i] = orig - step;
                    let down = loss(&probe);
                    probe.get_mut(id).data_mut()[i] = orig;
                    (up - down) / (2.0 * step)
                })
                .collect()
        })
        .collect()
}
