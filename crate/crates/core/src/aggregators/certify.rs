//! Empirical `(f, kappa)` robustness certificates.
//!
//! For an input set `g_1..g_n` and a subset `S` of size `n - f`, the rule is
//! charged the ratio
//!
//! ```text
//! |F(g) - mean_S|^2 / ( (1/|S|) sum_{i in S} |g_i - mean_S|^2 )
//! ```
//!
//! The certificate is the largest ratio over every subset of every sampled
//! input set. Subsets are enumerated exhaustively; input sets are sampled
//! from a mixture of benign and adversarial layouts.

use std::fmt;

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::{canonical_mean, dist_sq};
use crate::{DenseVector, Error, Result};

use super::{aggregate, AggregatorSpec};

/// Largest worker count for which exhaustive subset enumeration is attempted.
pub const MAX_CERTIFY_N: usize = 20;

/// Relative resolution used when a subset has zero spread: a deviation below
/// this fraction of the input set's extent counts as agreement. Smoothed
/// Weiszfeld cannot land exactly on a collapsed cluster in finitely many
/// steps, so an exact-zero test would reject it on rounding-level residue.
pub const DEGENERATE_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kappa {
    Finite(f64),
    Unbounded,
}

impl Kappa {
    pub fn is_finite(&self) -> bool {
        matches!(self, Kappa::Finite(_))
    }

    pub fn value(&self) -> f64 {
        match self {
            Kappa::Finite(k) => *k,
            Kappa::Unbounded => f64::INFINITY,
        }
    }
}

impl fmt::Display for Kappa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kappa::Finite(k) => write!(f, "{k}"),
            Kappa::Unbounded => f.write_str("inf"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessCertificate {
    pub rule: String,
    pub n: usize,
    pub f: usize,
    pub d: usize,
    pub trials: usize,
    /// Largest observed ratio, or `Unbounded` when some zero-spread subset
    /// was missed by the rule.
    pub kappa_hat: Kappa,
    /// Largest finite ratio observed.
    pub worst_subset_ratio: f64,
    pub subsets_checked: u64,
}

impl RobustnessCertificate {
    pub const CSV_HEADER: &'static str = "rule,n,f,d,trials,kappa_hat,worst_subset_ratio";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.rule, self.n, self.f, self.d, self.trials, self.kappa_hat, self.worst_subset_ratio
        )
    }
}

/// Worst-case behaviour of a rule on one input set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetReport {
    pub worst_ratio: f64,
    pub unbounded: bool,
    pub subsets: u64,
}

/// Evaluates every `(n - f)`-subset of `inputs` against the rule's output.
pub fn evaluate_set(spec: &AggregatorSpec, inputs: &[DenseVector], f: usize) -> Result<SetReport> {
    let n = inputs.len();
    let out = aggregate(spec, inputs)?;
    let dim = out.len();
    let mut report = SetReport {
        worst_ratio: 0.0,
        unbounded: false,
        subsets: 0,
    };
    let mut subset: Vec<&[f64]> = Vec::with_capacity(n - f);
    for members in (0..n).combinations(n - f) {
        subset.clear();
        subset.extend(members.iter().map(|&i| inputs[i].as_slice()));
        let mean = canonical_mean(&subset, dim);
        let numerator = dist_sq(&out, &mean);
        let spread = subset.iter().map(|g| dist_sq(g, &mean)).sum::<f64>() / subset.len() as f64;
        report.subsets += 1;
        if spread > 0.0 {
            report.worst_ratio = report.worst_ratio.max(numerator / spread);
        } else if numerator > 0.0 {
            let extent = inputs
                .iter()
                .map(|g| dist_sq(g, &mean))
                .fold(0.0, f64::max)
                .sqrt();
            let tol = DEGENERATE_REL_TOL * extent;
            if numerator > tol * tol {
                report.unbounded = true;
            }
        }
    }
    Ok(report)
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, d: usize, scale: f64) -> Vec<f64> {
    (0..d)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn unit<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v = gaussian(rng, d, 1.0);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn shifted(center: &[f64], offset: &[f64]) -> Vec<f64> {
    center.iter().zip(offset).map(|(c, o)| c + o).collect()
}

/// Samples one input set of `n` vectors of which `f` play the adversary.
///
/// Layouts: isotropic Gaussian; honest cloud plus one far cluster; honest
/// cloud plus sign-flipped copies; ALIE-style points at `mean - z * std`;
/// scattered far outliers; and a collapsed honest cluster on an integer
/// lattice with integer outliers. The final order is shuffled.
pub fn sample_trial<R: Rng + ?Sized>(rng: &mut R, n: usize, f: usize, d: usize) -> Vec<DenseVector> {
    let honest_n = n - f;
    let scale = (rng.random_range(-1.0f64..1.0) * 10f64.ln()).exp();
    let center = gaussian(rng, d, 3.0 * scale);
    let honest_cloud = |rng: &mut R| -> Vec<DenseVector> {
        (0..honest_n)
            .map(|_| shifted(&center, &gaussian(rng, d, scale)))
            .collect()
    };
    let mut set: Vec<DenseVector> = match rng.random_range(0..6u32) {
        0 => (0..n).map(|_| shifted(&center, &gaussian(rng, d, scale))).collect(),
        1 => {
            let mut set = honest_cloud(rng);
            let reach = scale * (d as f64).sqrt() * rng.random_range(2.0..50.0);
            let target: Vec<f64> = shifted(&center, &unit(rng, d).iter().map(|u| u * reach).collect::<Vec<_>>());
            for _ in 0..f {
                set.push(shifted(&target, &gaussian(rng, d, 0.1 * scale)));
            }
            set
        }
        2 => {
            let mut set = honest_cloud(rng);
            for _ in 0..f {
                let g = shifted(&center, &gaussian(rng, d, scale));
                set.push(g.into_iter().map(|x| -x).collect());
            }
            set
        }
        3 => {
            let mut set = honest_cloud(rng);
            let refs: Vec<&[f64]> = set.iter().map(Vec::as_slice).collect();
            let mean = canonical_mean(&refs, d);
            let std: Vec<f64> = (0..d)
                .map(|j| {
                    (set.iter().map(|g| (g[j] - mean[j]).powi(2)).sum::<f64>() / honest_n as f64).sqrt()
                })
                .collect();
            let z = rng.random_range(0.0..3.0);
            let point: Vec<f64> = mean.iter().zip(&std).map(|(m, s)| m - z * s).collect();
            for _ in 0..f {
                set.push(point.clone());
            }
            set
        }
        4 => {
            let mut set = honest_cloud(rng);
            for _ in 0..f {
                let reach = scale * (d as f64).sqrt() * rng.random_range(2.0..50.0);
                let dir: Vec<f64> = unit(rng, d).iter().map(|u| u * reach).collect();
                set.push(shifted(&center, &dir));
            }
            set
        }
        _ => {
            let lattice: Vec<f64> = (0..d).map(|_| rng.random_range(-5..=5) as f64).collect();
            let mut set = vec![lattice.clone(); honest_n];
            for _ in 0..f {
                let offset: Vec<f64> = (0..d)
                    .map(|_| {
                        let mag = rng.random_range(1..=20) as f64;
                        if rng.random_bool(0.5) {
                            mag
                        } else {
                            -mag
                        }
                    })
                    .collect();
                set.push(shifted(&lattice, &offset));
            }
            set
        }
    };
    set.shuffle(rng);
    set
}

/// Estimates the robustness coefficient of `spec` for `n` inputs with `f`
/// adversarial ones in dimension `d`.
pub fn certify_kappa<R: Rng + ?Sized>(
    spec: &AggregatorSpec,
    n: usize,
    f: usize,
    d: usize,
    trials: usize,
    rng: &mut R,
) -> Result<RobustnessCertificate> {
    if trials == 0 {
        return Err(Error::config("certification needs at least one trial"));
    }
    if d == 0 {
        return Err(Error::config("certification needs d >= 1"));
    }
    if n == 0 || n > MAX_CERTIFY_N {
        return Err(Error::config(format!(
            "exhaustive subset enumeration supports 1 <= n <= {MAX_CERTIFY_N}, got n = {n}"
        )));
    }
    if 2 * f >= n && f > 0 {
        return Err(Error::config(format!("certification needs f < n/2, got n = {n}, f = {f}")));
    }
    let mut spec = *spec;
    spec.f = Some(spec.f.unwrap_or(f));
    spec.validate(n)?;

    let mut worst = 0.0f64;
    let mut unbounded = false;
    let mut subsets = 0u64;
    for _ in 0..trials {
        let inputs = sample_trial(rng, n, f, d);
        let report = evaluate_set(&spec, &inputs, f)?;
        worst = worst.max(report.worst_ratio);
        unbounded |= report.unbounded;
        subsets += report.subsets;
    }
    Ok(RobustnessCertificate {
        rule: spec.label(),
        n,
        f,
        d,
        trials,
        kappa_hat: if unbounded {
            Kappa::Unbounded
        } else {
            Kappa::Finite(worst)
        },
        worst_subset_ratio: worst,
        subsets_checked: subsets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregators::Rule;
    use crate::rng::tagged_rng;

    #[test]
    fn averaging_is_unbounded_on_collapsed_pair() {
        let spec = AggregatorSpec::new(Rule::Avg, 1);
        let report = evaluate_set(&spec, &[vec![0.0], vec![0.0], vec![3.0]], 1).unwrap();
        assert!(report.unbounded);
        assert_eq!(report.subsets, 3);
    }

    #[test]
    fn averaging_with_f_zero_is_exact() {
        let spec = AggregatorSpec::new(Rule::Avg, 0);
        let mut rng = tagged_rng(9, 1);
        let cert = certify_kappa(&spec, 6, 0, 3, 50, &mut rng).unwrap();
        assert_eq!(cert.kappa_hat, Kappa::Finite(0.0));
    }

    #[test]
    fn median_on_majority_at_zero_is_finite() {
        let spec = AggregatorSpec::new(Rule::CwMed, 2);
        for m in [1.0, 1e3, 1e8] {
            let inputs = vec![vec![0.0], vec![0.0], vec![0.0], vec![m], vec![m]];
            let report = evaluate_set(&spec, &inputs, 2).unwrap();
            assert!(!report.unbounded, "M = {m}");
            assert!(report.worst_ratio.is_finite());
        }
    }

    #[test]
    fn rejects_infeasible_requests() {
        let spec = AggregatorSpec::new(Rule::CwMed, 1);
        let mut rng = tagged_rng(9, 1);
        assert!(certify_kappa(&spec, 21, 1, 2, 1, &mut rng).is_err());
        assert!(certify_kappa(&spec, 5, 1, 2, 0, &mut rng).is_err());
        assert!(certify_kappa(&spec, 4, 2, 2, 1, &mut rng).is_err());
    }

    #[test]
    fn csv_row_uses_inf_for_unbounded() {
        let cert = RobustnessCertificate {
            rule: "avg".into(),
            n: 3,
            f: 1,
            d: 1,
            trials: 10,
            kappa_hat: Kappa::Unbounded,
            worst_subset_ratio: 2.5,
            subsets_checked: 30,
        };
        assert_eq!(cert.csv_row(), "avg,3,1,1,10,inf,2.5");
    }
}
