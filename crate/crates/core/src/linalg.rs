//! Small dense-vector kernels shared by the aggregators, oracles and engine.

use std::cmp::Ordering;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `y += alpha * x`
pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Lexicographic total order on vectors (`f64::total_cmp` per coordinate).
pub fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

/// Arithmetic mean of `vectors`, accumulated as a running mean.
///
/// The running form returns `v` exactly when every input equals `v`. Callers
/// that need permutation invariance should pass the vectors in a canonical
/// order (see [`canonical_mean`]).
pub fn running_mean<'a, I>(vectors: I, dim: usize) -> Vec<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut mean = vec![0.0; dim];
    for (count, v) in vectors.into_iter().enumerate() {
        debug_assert_eq!(v.len(), dim);
        if count == 0 {
            mean.copy_from_slice(v);
            continue;
        }
        let inv = 1.0 / (count as f64 + 1.0);
        for (m, x) in mean.iter_mut().zip(v) {
            *m += (x - *m) * inv;
        }
    }
    mean
}

/// Mean of `vectors` summed in lexicographic order, so the result does not
/// depend on the order the inputs arrive in.
pub fn canonical_mean(vectors: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut sorted: Vec<&[f64]> = vectors.to_vec();
    sorted.sort_by(|a, b| lex_cmp(a, b));
    running_mean(sorted, dim)
}

/// Weighted running mean; exact when all inputs coincide.
pub fn weighted_running_mean(vectors: &[&[f64]], weights: &[f64], dim: usize) -> Vec<f64> {
    let mut mean = vec![0.0; dim];
    let mut total = 0.0;
    for (v, &w) in vectors.iter().zip(weights) {
        total += w;
        if total == w {
            mean.copy_from_slice(v);
            continue;
        }
        let frac = w / total;
        for (m, x) in mean.iter_mut().zip(v.iter()) {
            *m += (x - *m) * frac;
        }
    }
    mean
}

/// Clamp every coordinate of `out` into the per-coordinate hull of `inputs`.
pub(crate) fn clamp_to_box(out: &mut [f64], inputs: &[&[f64]]) {
    for (j, o) in out.iter_mut().enumerate() {
        let (lo, hi) = inputs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v[j]), hi.max(v[j]))
            });
        if lo <= hi {
            *o = o.clamp(lo, hi);
        }
    }
}
