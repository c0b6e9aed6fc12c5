//! Robust aggregation rules, nearest-neighbour mixing and the empirical
//! `(f, kappa)` robustness certifier.
//!
//! All rules are exactly permutation invariant: inputs are visited in a
//! canonical (sorted) order wherever floating-point accumulation order would
//! otherwise leak into the result.

mod certify;
mod nnm;
mod rules;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use certify::{
    certify_kappa, evaluate_set, sample_trial, Kappa, RobustnessCertificate, SetReport,
    DEGENERATE_REL_TOL, MAX_CERTIFY_N,
};
pub use nnm::nnm_preaggregate;
pub use rules::{average, cwmed, cwtm, rfa};

use crate::{DenseVector, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    Avg,
    #[serde(rename = "cwmed")]
    CwMed,
    Cwtm,
    Rfa,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::Avg => "avg",
            Rule::CwMed => "cwmed",
            Rule::Cwtm => "cwtm",
            Rule::Rfa => "rfa",
        })
    }
}

pub const DEFAULT_RFA_ITERATIONS: usize = 8;
pub const DEFAULT_RFA_SMOOTHING: f64 = 1e-6;

/// Aggregation rule `F` with its trimming level and optional NNM stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatorSpec {
    pub rule: Rule,
    /// Number of inputs the rule is designed to tolerate. `None` inherits the
    /// run's Byzantine count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<usize>,
    #[serde(default)]
    pub use_nnm: bool,
    #[serde(default = "default_rfa_iterations")]
    pub rfa_iterations: usize,
    #[serde(default = "default_rfa_smoothing")]
    pub rfa_smoothing: f64,
}

fn default_rfa_iterations() -> usize {
    DEFAULT_RFA_ITERATIONS
}

fn default_rfa_smoothing() -> f64 {
    DEFAULT_RFA_SMOOTHING
}

impl AggregatorSpec {
    pub fn new(rule: Rule, f: usize) -> Self {
        Self {
            rule,
            f: Some(f),
            use_nnm: false,
            rfa_iterations: DEFAULT_RFA_ITERATIONS,
            rfa_smoothing: DEFAULT_RFA_SMOOTHING,
        }
    }

    pub fn with_nnm(mut self, use_nnm: bool) -> Self {
        self.use_nnm = use_nnm;
        self
    }

    pub fn trim(&self) -> usize {
        self.f.unwrap_or(0)
    }

    /// Short label such as `cwtm+nnm`.
    pub fn label(&self) -> String {
        if self.use_nnm {
            format!("{}+nnm", self.rule)
        } else {
            self.rule.to_string()
        }
    }

    /// Checks this aggregator against `n` inputs.
    pub fn validate(&self, n: usize) -> Result<()> {
        let f = self.trim();
        if n == 0 {
            return Err(Error::config("aggregation needs at least one input"));
        }
        if f > 0 && 2 * f >= n {
            return Err(Error::config(format!(
                "aggregator.f = {f} requires n > 2f, got n = {n}"
            )));
        }
        if self.rfa_iterations == 0 {
            return Err(Error::config("aggregator.rfa_iterations must be at least 1"));
        }
        if !(self.rfa_smoothing > 0.0) {
            return Err(Error::config("aggregator.rfa_smoothing must be positive"));
        }
        Ok(())
    }
}

pub(crate) fn check_inputs(inputs: &[DenseVector]) -> Result<usize> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::argument("aggregation needs at least one input"))?;
    let dim = first.len();
    if let Some(bad) = inputs.iter().position(|v| v.len() != dim) {
        return Err(Error::argument(format!(
            "input {bad} has dimension {} but input 0 has dimension {dim}",
            inputs[bad].len()
        )));
    }
    Ok(dim)
}

/// Applies the optional NNM stage and then the rule.
pub fn aggregate(spec: &AggregatorSpec, inputs: &[DenseVector]) -> Result<DenseVector> {
    check_inputs(inputs)?;
    spec.validate(inputs.len())?;
    let mixed;
    let inputs = if spec.use_nnm {
        mixed = nnm_preaggregate(inputs, spec.trim())?;
        &mixed[..]
    } else {
        inputs
    };
    match spec.rule {
        Rule::Avg => average(inputs),
        Rule::CwMed => cwmed(inputs),
        Rule::Cwtm => cwtm(inputs, spec.trim()),
        Rule::Rfa => rfa(inputs, spec.rfa_iterations, spec.rfa_smoothing),
    }
}
