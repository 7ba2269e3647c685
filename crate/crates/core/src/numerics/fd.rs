use super::{GradMap, ParamSet};
use crate::error::{ensure, OryxError, Result};

/// Central-difference gradient `(f(p + h) - f(p - h)) / 2h`, one coordinate
/// at a time.
pub fn finite_difference_grad<F>(f: F, params: &ParamSet, h: f64) -> Result<GradMap>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    stencil(f, params, h, &[(1.0, 0.5)])
}

/// Five-point central difference, error `O(h⁴)`. Worth its doubled cost
/// when the function has sharp curvature, e.g. a normalisation whose
/// input variance is close to its epsilon.
pub fn finite_difference_grad_5pt<F>(f: F, params: &ParamSet, h: f64) -> Result<GradMap>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    stencil(f, params, h, &[(1.0, 8.0 / 12.0), (2.0, -1.0 / 12.0)])
}

/// `Σ c · (f(p + k h) - f(p - k h)) / h` over `(k, c)` pairs.
fn stencil<F>(mut f: F, params: &ParamSet, h: f64, taps: &[(f64, f64)]) -> Result<GradMap>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    ensure!(h > 0.0, "step size must be positive, got {h}");
    let mut probe = params.clone();
    let mut grads = params.zeros_like();
    for i in 0..params.len() {
        for c in 0..params.by_index(i).1.numel() {
            let orig = probe.by_index(i).1.data()[c];
            let mut g = 0.0;
            for &(k, coef) in taps {
                probe.by_index_mut(i).data_mut()[c] = orig + k * h;
                let up = f(&probe)?;
                probe.by_index_mut(i).data_mut()[c] = orig - k * h;
                let down = f(&probe)?;
                if !up.is_finite() || !down.is_finite() {
                    return Err(OryxError::Numeric {
                        node: format!("finite_difference({}[{c}])", params.by_index(i).0),
                    });
                }
                g += coef * (up - down);
            }
            probe.by_index_mut(i).data_mut()[c] = orig;
            grads.by_index_mut(i).data_mut()[c] = g / h;
        }
    }
    Ok(grads)
}

/// Largest coordinate-wise `|a - b| / max(|a|, |b|, floor)` across two
/// gradient maps.
pub fn max_relative_error(a: &GradMap, b: &GradMap, floor: f64) -> f64 {
    a.iter()
        .zip(b.iter())
        .flat_map(|((_, ta), (_, tb))| ta.data().iter().zip(tb.data()))
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
