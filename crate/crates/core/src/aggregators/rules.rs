use crate::linalg::{canonical_mean, clamp_to_box, dist_sq, lex_cmp, running_mean, weighted_running_mean};
use crate::{DenseVector, Error, Result};

use super::check_inputs;

/// Plain coordinate-wise average.
pub fn average(inputs: &[DenseVector]) -> Result<DenseVector> {
    let dim = check_inputs(inputs)?;
    let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    Ok(canonical_mean(&refs, dim))
}

fn column(inputs: &[DenseVector], j: usize, buf: &mut Vec<f64>) {
    buf.clear();
    buf.extend(inputs.iter().map(|v| v[j]));
    buf.sort_unstable_by(f64::total_cmp);
}

/// Coordinate-wise median; even counts use the midpoint of the two central
/// order statistics.
pub fn cwmed(inputs: &[DenseVector]) -> Result<DenseVector> {
    let dim = check_inputs(inputs)?;
    let n = inputs.len();
    let mut col = Vec::with_capacity(n);
    let out = (0..dim)
        .map(|j| {
            column(inputs, j, &mut col);
            if n % 2 == 1 {
                col[n / 2]
            } else {
                let (a, b) = (col[n / 2 - 1], col[n / 2]);
                (a + b) / 2.0
            }
        })
        .collect();
    Ok(out)
}

/// Coordinate-wise trimmed mean: drops the `f` largest and `f` smallest
/// values of every coordinate and averages the remaining `n - 2f`.
pub fn cwtm(inputs: &[DenseVector], f: usize) -> Result<DenseVector> {
    let dim = check_inputs(inputs)?;
    let n = inputs.len();
    if n <= 2 * f {
        return Err(Error::config(format!(
            "trimmed mean with f = {f} needs more than {} inputs, got {n}",
            2 * f
        )));
    }
    let mut col = Vec::with_capacity(n);
    let out = (0..dim)
        .map(|j| {
            column(inputs, j, &mut col);
            let kept = &col[f..n - f];
            let mean = running_mean(kept.iter().map(std::slice::from_ref), 1)[0];
            mean.clamp(kept[0], kept[kept.len() - 1])
        })
        .collect();
    Ok(out)
}

/// Smoothed Weiszfeld iterations for the geometric median.
///
/// Starts at the coordinate-wise mean and runs exactly `iterations` steps of
/// `z <- sum(w_i g_i) / sum(w_i)` with `w_i = 1 / max(nu, |g_i - z|)`.
pub fn rfa(inputs: &[DenseVector], iterations: usize, nu: f64) -> Result<DenseVector> {
    let dim = check_inputs(inputs)?;
    if iterations == 0 {
        return Err(Error::argument("rfa needs at least one iteration"));
    }
    if !(nu > 0.0) {
        return Err(Error::argument("rfa smoothing must be positive"));
    }
    let mut refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    refs.sort_by(|a, b| lex_cmp(a, b));
    let mut z = running_mean(refs.iter().copied(), dim);
    let mut weights = vec![0.0; refs.len()];
    for _ in 0..iterations {
        for (w, g) in weights.iter_mut().zip(&refs) {
            *w = 1.0 / dist_sq(g, &z).sqrt().max(nu);
        }
        z = weighted_running_mean(&refs, &weights, dim);
    }
    clamp_to_box(&mut z, &refs);
    Ok(z)
}
