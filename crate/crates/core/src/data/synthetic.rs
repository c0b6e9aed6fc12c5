//! Synthetic datasets: two-blob problems with a reference optimum, and a
//! sparse binary stand-in shaped like the a9a benchmark.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::compressors::SparseDelta;
use crate::linalg::norm_sq;
use crate::rng::{derive_seed, tag, tagged_rng};
use crate::{Error, Result};

use super::loss::{logistic_grad, logistic_loss, sigmoid};
use super::Example;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub examples: usize,
    pub dim: usize,
    /// Distance between the two class means.
    pub separation: f64,
    pub seed: u64,
    /// Regulariser of the problem whose optimum is stored.
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticProblem {
    pub examples: Vec<Example>,
    pub dim: usize,
    pub lambda: f64,
    /// Minimiser of the pooled regularised loss, `|grad| <= 1e-10`.
    pub x_star: Vec<f64>,
}

impl SyntheticProblem {
    pub fn loss_star(&self) -> f64 {
        logistic_loss(&self.x_star, &self.examples, self.lambda).expect("nonempty dataset")
    }
}

/// Two Gaussian blobs at `+-separation/2` along the diagonal direction, with
/// unit isotropic noise and balanced random labels. Also solves for the
/// optimum of the pooled loss with regulariser `spec.lambda`.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<SyntheticProblem> {
    if !(spec.lambda > 0.0) {
        return Err(Error::argument("synthetic reference optimum needs lambda > 0"));
    }
    let examples = synthetic_examples(spec)?;
    let x_star = solve_reference(&examples, spec.dim, spec.lambda, 1e-10)?;
    Ok(SyntheticProblem {
        examples,
        dim: spec.dim,
        lambda: spec.lambda,
        x_star,
    })
}

/// The examples of [`make_synthetic`] without the optimum.
pub fn synthetic_examples(spec: &SyntheticSpec) -> Result<Vec<Example>> {
    if spec.dim == 0 {
        return Err(Error::argument("synthetic dimension must be at least 1"));
    }
    if spec.examples == 0 {
        return Err(Error::argument("synthetic dataset needs at least one example"));
    }
    let mut rng = tagged_rng(tag::SYNTHETIC, spec.seed);
    let offset = 0.5 * spec.separation / (spec.dim as f64).sqrt();
    Ok((0..spec.examples)
        .map(|_| {
            let label: i8 = if rng.random_bool(0.5) { 1 } else { -1 };
            let row: Vec<f64> = (0..spec.dim)
                .map(|_| f64::from(label) * offset + rng.sample::<f64, _>(StandardNormal))
                .collect();
            Example {
                features: SparseDelta::from_dense(&row),
                label,
            }
        })
        .collect())
}

/// Minimises the pooled regularised logistic loss with damped Newton steps
/// until the full gradient norm is at most `tol`.
fn solve_reference(examples: &[Example], dim: usize, lambda: f64, tol: f64) -> Result<Vec<f64>> {
    let mut x = vec![0.0; dim];
    let m = examples.len() as f64;
    for _ in 0..200 {
        let grad = logistic_grad(&x, examples, lambda)?;
        if norm_sq(&grad).sqrt() <= tol {
            return Ok(x);
        }
        let mut hess = vec![0.0; dim * dim];
        for e in examples {
            let s = sigmoid(e.margin(&x));
            let w = s * (1.0 - s) / m;
            let entries = e.features.entries();
            for &(i, vi) in entries {
                for &(j, vj) in entries {
                    hess[i as usize * dim + j as usize] += w * vi * vj;
                }
            }
        }
        for i in 0..dim {
            hess[i * dim + i] += 2.0 * lambda;
        }
        let step = cholesky_solve(&mut hess, &grad, dim)?;
        let f0 = logistic_loss(&x, examples, lambda)?;
        let slope: f64 = -grad.iter().zip(&step).map(|(g, s)| g * s).sum::<f64>();
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = x.iter().zip(&step).map(|(xi, si)| xi - t * si).collect();
            let f1 = logistic_loss(&cand, examples, lambda)?;
            let flat = (f1 - f0).abs() <= 1e-13 * f0.abs().max(1.0);
            if f1 <= f0 + 1e-4 * t * slope || flat || t < 1e-10 {
                x = cand;
                break;
            }
            t *= 0.5;
        }
    }
    let grad = logistic_grad(&x, examples, lambda)?;
    if norm_sq(&grad).sqrt() <= tol {
        Ok(x)
    } else {
        Err(Error::State(format!(
            "reference solve stalled at gradient norm {:e}",
            norm_sq(&grad).sqrt()
        )))
    }
}

/// Solves `A s = b` for symmetric positive definite `A` (overwritten).
fn cholesky_solve(a: &mut [f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag -= a[j * n + k] * a[j * n + k];
        }
        if !(diag > 0.0) {
            return Err(Error::State("Hessian is not positive definite".into()));
        }
        let diag = diag.sqrt();
        a[j * n + j] = diag;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / diag;
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= a[i * n + k] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= a[k * n + i] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    Ok(y)
}

/// Writes a vector as whitespace-separated decimals on one line.
pub fn write_vector<W: Write>(w: &mut W, x: &[f64]) -> Result<()> {
    let text: Vec<String> = x.iter().map(|v| v.to_string()).collect();
    writeln!(w, "{}", text.join(" "))?;
    Ok(())
}

pub const A9A_EXAMPLES: usize = 32_561;
pub const A9A_DIM: usize = 123;

/// One-hot group widths; every row sets exactly one column per group.
const A9A_GROUPS: [usize; 14] = [5, 7, 16, 7, 7, 15, 6, 5, 2, 3, 3, 3, 2, 42];

/// Sparse binary dataset with the shape of a9a: 32,561 rows, 123 one-hot
/// columns in 14 groups, ~24% positive labels drawn from a logistic model.
pub fn a9a_like(seed: u64) -> Vec<Example> {
    debug_assert_eq!(A9A_GROUPS.iter().sum::<usize>(), A9A_DIM);
    let mut rng = tagged_rng(tag::SYNTHETIC, derive_seed(&[0xA9A, seed]));
    // Skewed category frequencies per group.
    let probs: Vec<Vec<f64>> = A9A_GROUPS
        .iter()
        .map(|&width| {
            let mut w: Vec<f64> = (0..width).map(|_| rng.random::<f64>().powi(3) + 1e-3).collect();
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|p| *p /= total);
            w
        })
        .collect();
    let weights: Vec<f64> = (0..A9A_DIM)
        .map(|_| 0.8 * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let rows: Vec<Vec<u32>> = (0..A9A_EXAMPLES)
        .map(|_| {
            let mut start = 0u32;
            let mut cols = Vec::with_capacity(A9A_GROUPS.len());
            for (g, &width) in A9A_GROUPS.iter().enumerate() {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = width - 1;
                for (c, p) in probs[g].iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = c;
                        break;
                    }
                }
                cols.push(start + pick as u32);
                start += width as u32;
            }
            cols
        })
        .collect();
    let scores: Vec<f64> = rows
        .iter()
        .map(|cols| cols.iter().map(|&c| weights[c as usize]).sum())
        .collect();

    // Bias chosen by bisection so the expected positive rate is ~24%.
    let positive_rate = |bias: f64| scores.iter().map(|s| sigmoid(s + bias)).sum::<f64>() / scores.len() as f64;
    let (mut lo, mut hi) = (-50.0, 50.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if positive_rate(mid) < 0.24 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let bias = 0.5 * (lo + hi);

    rows.into_iter()
        .zip(scores)
        .map(|(cols, s)| {
            let label = if rng.random_bool(sigmoid(s + bias)) { 1 } else { -1 };
            let entries = cols.into_iter().map(|c| (c, 1.0)).collect();
            Example {
                features: SparseDelta::from_entries(A9A_DIM, entries).expect("columns increase"),
                label,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset_hash;

    #[test]
    fn reference_optimum_has_small_gradient() {
        let p = make_synthetic(&SyntheticSpec {
            examples: 300,
            dim: 4,
            separation: 2.0,
            seed: 1,
            lambda: 0.01,
        })
        .unwrap();
        let g = logistic_grad(&p.x_star, &p.examples, p.lambda).unwrap();
        assert!(norm_sq(&g).sqrt() <= 1e-10);
    }

    #[test]
    fn zero_separation_gives_small_optimum() {
        let p = make_synthetic(&SyntheticSpec {
            examples: 2000,
            dim: 5,
            separation: 0.0,
            seed: 3,
            lambda: 0.05,
        })
        .unwrap();
        let sep = make_synthetic(&SyntheticSpec {
            separation: 4.0,
            ..SyntheticSpec {
                examples: 2000,
                dim: 5,
                separation: 0.0,
                seed: 3,
                lambda: 0.05,
            }
        })
        .unwrap();
        let small = norm_sq(&p.x_star).sqrt();
        assert!(small < 0.1, "{small}");
        assert!(small < 0.1 * norm_sq(&sep.x_star).sqrt());
    }

    #[test]
    fn separated_one_dimensional_problem_is_classified() {
        let p = make_synthetic(&SyntheticSpec {
            examples: 1000,
            dim: 1,
            separation: 12.0,
            seed: 5,
            lambda: 1e-3,
        })
        .unwrap();
        let correct = p
            .examples
            .iter()
            .filter(|e| f64::from(e.label) * e.margin(&p.x_star) > 0.0)
            .count();
        assert!(correct as f64 >= 0.99 * p.examples.len() as f64, "{correct}");
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = SyntheticSpec {
            examples: 50,
            dim: 3,
            separation: 1.0,
            seed: 8,
            lambda: 0.1,
        };
        let a = make_synthetic(&spec).unwrap();
        let b = make_synthetic(&spec).unwrap();
        assert_eq!(dataset_hash(&a.examples), dataset_hash(&b.examples));
        assert_eq!(a.x_star, b.x_star);
    }

    #[test]
    fn a9a_like_shape() {
        let data = a9a_like(0);
        assert_eq!(data.len(), A9A_EXAMPLES);
        assert!(data.iter().all(|e| e.dim() == A9A_DIM && e.features.len() == 14));
        let pos = data.iter().filter(|e| e.label == 1).count() as f64 / data.len() as f64;
        assert!((0.21..0.27).contains(&pos), "{pos}");
        assert_eq!(dataset_hash(&data), dataset_hash(&a9a_like(0)));
    }

    #[test]
    fn rejects_degenerate_specs() {
        let base = SyntheticSpec {
            examples: 10,
            dim: 2,
            separation: 1.0,
            seed: 0,
            lambda: 0.1,
        };
        assert!(make_synthetic(&SyntheticSpec { dim: 0, ..base }).is_err());
        assert!(make_synthetic(&SyntheticSpec { lambda: 0.0, ..base }).is_err());
    }
}
