//! Step-size and momentum calculator for Byz-EF21-SGDM.

use serde::Serialize;

use crate::{Error, Result};

use super::diagnostics::LocalLoss;
use crate::data::smoothness_bound;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryParams {
    /// Smoothness of the honest loss.
    pub l: f64,
    /// Aggregate smoothness of the local losses.
    pub l_tilde: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub n: usize,
    pub f: usize,
    pub eta: f64,
    pub sigma_sq: Option<f64>,
    pub delta0: Option<f64>,
    pub rounds: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryOutput {
    pub gamma_max: f64,
    /// Present when `sigma_sq`, `delta0` and `rounds` are all given.
    pub eta_suggestion: Option<f64>,
    pub delta: f64,
}

fn check_common(l: f64, l_tilde: f64, kappa: f64, alpha: f64) -> Result<()> {
    if !(l_tilde > 0.0) {
        return Err(Error::argument(format!("L~ = {l_tilde} must be positive")));
    }
    if !(l > 0.0) {
        return Err(Error::argument(format!("L = {l} must be positive")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::argument(format!("alpha = {alpha} is not in (0, 1]")));
    }
    if !(kappa >= 0.0) {
        return Err(Error::argument(format!("kappa = {kappa} must be nonnegative")));
    }
    Ok(())
}

/// Largest admissible step size for momentum `eta`.
pub fn gamma_max(l: f64, l_tilde: f64, kappa: f64, alpha: f64, eta: f64) -> Result<f64> {
    check_common(l, l_tilde, kappa, alpha)?;
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::argument(format!("eta = {eta} is not in (0, 1]")));
    }
    let c = 6.0 * kappa + 1.0;
    let first = alpha / (8.0 * l_tilde * (3.0 * c).sqrt());
    let second = eta / (2.0 * (3.0 * (6.0 * kappa * l_tilde * l_tilde + l * l)).sqrt());
    Ok(first.min(second))
}

/// Variance coefficient of the stationarity bound.
pub fn delta_constant(eta: f64, kappa: f64, alpha: f64, honest: usize) -> f64 {
    let c = 6.0 * kappa + 1.0;
    24.0 * eta.powi(3) * c / (alpha * alpha)
        + 6.0 * c * eta * eta / alpha
        + 3.0 * eta / honest as f64
        + 18.0 * kappa * eta
}

/// Momentum from the four-term rule, capped at 1. The kappa term is
/// skipped when `kappa = 0`.
pub fn eta_suggestion(
    l: f64,
    delta0: f64,
    alpha: f64,
    kappa: f64,
    sigma_sq: f64,
    honest: usize,
    rounds: u64,
) -> Result<f64> {
    if !(delta0 > 0.0 && sigma_sq > 0.0 && rounds > 0) {
        return Err(Error::argument(
            "eta suggestion needs delta0 > 0, sigma_sq > 0 and rounds > 0",
        ));
    }
    let c = 1.0 + 6.0 * kappa;
    let st = sigma_sq * rounds as f64;
    let mut eta = (l * delta0 * alpha * alpha / (24.0 * c * st)).powf(0.25);
    eta = eta.min((l * delta0 * alpha / (6.0 * c * st)).powf(1.0 / 3.0));
    eta = eta.min((l * delta0 * honest as f64 / (3.0 * st)).sqrt());
    if kappa > 0.0 {
        eta = eta.min((l * delta0 / (18.0 * kappa * st)).sqrt());
    }
    Ok(eta.min(1.0))
}

pub fn theorem1_params(p: &TheoryParams) -> Result<TheoryOutput> {
    check_common(p.l, p.l_tilde, p.kappa, p.alpha)?;
    if p.f >= p.n {
        return Err(Error::argument("need at least one honest worker"));
    }
    let honest = p.n - p.f;
    let eta_suggestion = match (p.sigma_sq, p.delta0, p.rounds) {
        (Some(s), Some(d), Some(t)) => Some(eta_suggestion(p.l, d, p.alpha, p.kappa, s, honest, t)?),
        _ => None,
    };
    Ok(TheoryOutput {
        gamma_max: gamma_max(p.l, p.l_tilde, p.kappa, p.alpha, p.eta)?,
        eta_suggestion,
        delta: delta_constant(p.eta, p.kappa, p.alpha, honest),
    })
}

/// `(L, L~)` from per-worker bounds `L_i = max |a|^2 / 4 + 2 lambda_i`:
/// `L` is their mean and `L~` their root mean square.
pub fn smoothness_constants(locals: &[LocalLoss<'_>]) -> Result<(f64, f64)> {
    if locals.is_empty() {
        return Err(Error::argument("need at least one honest worker"));
    }
    let bounds: Vec<f64> = locals
        .iter()
        .map(|l| smoothness_bound(&l.shard.examples, l.lambda))
        .collect();
    let h = bounds.len() as f64;
    let l = bounds.iter().sum::<f64>() / h;
    let l_tilde = (bounds.iter().map(|b| b * b).sum::<f64>() / h).sqrt();
    Ok((l, l_tilde))
}
