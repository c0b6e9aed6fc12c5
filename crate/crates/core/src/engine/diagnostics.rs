//! Full-gradient metrics on the honest loss and white-box diagnostics of the
//! honest optimiser state.

use crate::compressors::{uplink_bits, SparseDelta};
use crate::data::{logistic_grad, logistic_loss, Shard};
use crate::linalg::{dist_sq, norm_sq};
use crate::{DenseVector, Error, Result};

/// One honest worker's local objective.
#[derive(Debug, Clone, Copy)]
pub struct LocalLoss<'a> {
    pub shard: &'a Shard,
    pub lambda: f64,
}

impl<'a> LocalLoss<'a> {
    pub fn new(shard: &'a Shard, lambda: f64) -> Self {
        Self { shard, lambda }
    }

    pub fn loss(&self, x: &[f64]) -> Result<f64> {
        logistic_loss(x, &self.shard.examples, self.lambda)
    }

    pub fn grad(&self, x: &[f64]) -> Result<DenseVector> {
        logistic_grad(x, &self.shard.examples, self.lambda)
    }
}

fn mean_in_order(vectors: &[DenseVector]) -> Result<DenseVector> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::argument("need at least one honest worker"))?;
    let mut sum = vec![0.0; first.len()];
    for v in vectors {
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    let inv = 1.0 / vectors.len() as f64;
    sum.iter_mut().for_each(|s| *s *= inv);
    Ok(sum)
}

/// Per-worker full-shard gradients, in worker order.
pub fn local_gradients(x: &[f64], locals: &[LocalLoss<'_>]) -> Result<Vec<DenseVector>> {
    locals.iter().map(|l| l.grad(x)).collect()
}

/// `grad L_H(x)`, the mean of the honest full gradients.
pub fn honest_full_gradient(x: &[f64], locals: &[LocalLoss<'_>]) -> Result<DenseVector> {
    mean_in_order(&local_gradients(x, locals)?)
}

/// `L_H(x)`, the mean of the honest local losses.
pub fn honest_loss(x: &[f64], locals: &[LocalLoss<'_>]) -> Result<f64> {
    if locals.is_empty() {
        return Err(Error::argument("need at least one honest worker"));
    }
    let total: f64 = locals.iter().map(|l| l.loss(x)).sum::<Result<f64>>()?;
    Ok(total / locals.len() as f64)
}

/// Mean squared distance of the local gradients to their mean.
pub fn heterogeneity_of(grads: &[DenseVector]) -> Result<f64> {
    let mean = mean_in_order(grads)?;
    let total: f64 = grads.iter().map(|g| dist_sq(g, &mean)).sum();
    Ok(total / grads.len() as f64)
}

pub fn realized_heterogeneity(x: &[f64], locals: &[LocalLoss<'_>]) -> Result<f64> {
    heterogeneity_of(&local_gradients(x, locals)?)
}

/// Both sides of the robust aggregation error bound plus the sums that
/// enter it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma2Report {
    pub lhs: f64,
    /// `NaN` when no kappa is available.
    pub rhs: f64,
    pub holds: bool,
    /// `sum |g_i - v_i|^2` over honest workers.
    pub comp_err: f64,
    /// `sum |v_i - grad L_i(x)|^2` over honest workers.
    pub mom_dev: f64,
    /// `|mean v_i - grad L_H(x)|^2`.
    pub mean_mom_dev: f64,
    pub heterogeneity: f64,
}

pub const LEMMA2_SLACK: f64 = 1e-9;

/// Evaluates the bound from precomputed honest full gradients.
///
/// `shadows`, `v_list` and `grads` are indexed by honest worker.
pub fn lemma2_terms(
    g_agg: &[f64],
    shadows: &[&[f64]],
    v_list: &[&[f64]],
    grads: &[DenseVector],
    kappa: Option<f64>,
) -> Result<Lemma2Report> {
    let h = shadows.len();
    if h == 0 || v_list.len() != h || grads.len() != h {
        return Err(Error::argument(format!(
            "lemma2 needs matching honest lists, got {} shadows, {} momenta, {} gradients",
            h,
            v_list.len(),
            grads.len()
        )));
    }
    let shadow_mean = mean_in_order(&shadows.iter().map(|s| s.to_vec()).collect::<Vec<_>>())?;
    let lhs = dist_sq(g_agg, &shadow_mean);
    let comp_err: f64 = shadows.iter().zip(v_list).map(|(g, v)| dist_sq(g, v)).sum();
    let mom_dev: f64 = v_list.iter().zip(grads).map(|(v, gr)| dist_sq(v, gr)).sum();
    let v_mean = mean_in_order(&v_list.iter().map(|v| v.to_vec()).collect::<Vec<_>>())?;
    let grad_mean = mean_in_order(grads)?;
    let mean_mom_dev = dist_sq(&v_mean, &grad_mean);
    let heterogeneity = heterogeneity_of(grads)?;
    let hf = h as f64;
    let rhs = match kappa {
        Some(k) => {
            6.0 * k * (hf - 1.0) / (hf * hf) * (comp_err + mom_dev)
                + 6.0 * k * (hf - 1.0) / hf * heterogeneity
        }
        None => f64::NAN,
    };
    Ok(Lemma2Report {
        lhs,
        rhs,
        holds: lhs <= rhs * (1.0 + LEMMA2_SLACK),
        comp_err,
        mom_dev,
        mean_mom_dev,
        heterogeneity,
    })
}

/// Robust aggregation error check at model `x`.
pub fn lemma2_check(
    g_agg: &[f64],
    shadows: &[&[f64]],
    v_list: &[&[f64]],
    x: &[f64],
    locals: &[LocalLoss<'_>],
    kappa: f64,
) -> Result<Lemma2Report> {
    let grads = local_gradients(x, locals)?;
    lemma2_terms(g_agg, shadows, v_list, &grads, Some(kappa))
}

/// Inputs of the Lyapunov function besides the model and momenta.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovParams {
    pub loss_star: f64,
    pub gamma: f64,
    pub eta: f64,
    pub alpha: f64,
    pub kappa: f64,
}

pub const STALE_OPTIMUM_TOL: f64 = 1e-9;

/// `delta + c_M * sum |M_i|^2 + (3 gamma / eta) |M~|^2`.
///
/// Errors when the model is below the supplied optimum by more than
/// [`STALE_OPTIMUM_TOL`].
pub fn lyapunov_value(
    x: &[f64],
    v_list: &[&[f64]],
    locals: &[LocalLoss<'_>],
    p: &LyapunovParams,
) -> Result<f64> {
    if v_list.len() != locals.len() {
        return Err(Error::argument("one momentum per honest worker is required"));
    }
    if !(p.eta > 0.0) || !(p.alpha > 0.0) {
        return Err(Error::argument("lyapunov needs eta > 0 and alpha > 0"));
    }
    let delta = honest_loss(x, locals)? - p.loss_star;
    if delta < -STALE_OPTIMUM_TOL {
        return Err(Error::State(format!(
            "honest loss is {delta:e} below loss_star; the optimum is stale"
        )));
    }
    let grads = local_gradients(x, locals)?;
    let mom_dev: f64 = v_list.iter().zip(&grads).map(|(v, g)| dist_sq(v, g)).sum();
    let v_mean = mean_in_order(&v_list.iter().map(|v| v.to_vec()).collect::<Vec<_>>())?;
    let mean_mom_dev = dist_sq(&v_mean, &mean_in_order(&grads)?);
    let h = locals.len() as f64;
    let (g, eta, a, k) = (p.gamma, p.eta, p.alpha, p.kappa);
    let coef_m = 6.0 * g * (4.0 * eta * eta * (1.0 + eta) * (1.0 + 6.0 * k) + 3.0 * k * a * a)
        / (eta * a * a * h);
    Ok(delta + coef_m * mom_dev + 3.0 * g / eta * mean_mom_dev)
}

/// Total uplink bits of one round's messages.
pub fn account_round(deltas: &[SparseDelta], value_bits: u32) -> u64 {
    deltas
        .iter()
        .map(|d| uplink_bits(d, value_bits, d.dim()))
        .sum()
}

pub fn grad_norm_sq(grad: &[f64]) -> f64 {
    norm_sq(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Example;

    fn shard(owner: usize, rows: &[(&[f64], i8)]) -> Shard {
        Shard::new(
            owner,
            rows.iter()
                .map(|(a, b)| Example::new(SparseDelta::from_dense(a), *b).unwrap())
                .collect(),
        )
    }

    #[test]
    fn heterogeneity_examples() {
        assert_eq!(heterogeneity_of(&[vec![1.0], vec![3.0]]).unwrap(), 1.0);
        assert_eq!(heterogeneity_of(&[vec![2.0, 1.0]]).unwrap(), 0.0);
        let s = shard(0, &[(&[1.0, 0.5], 1), (&[-1.0, 2.0], -1)]);
        let locals = [LocalLoss::new(&s, 0.1), LocalLoss::new(&s, 0.1)];
        let x = [0.3, -0.7];
        assert_eq!(realized_heterogeneity(&x, &locals).unwrap(), 0.0);
        assert_eq!(
            honest_full_gradient(&x, &locals).unwrap(),
            locals[0].grad(&x).unwrap()
        );
        assert_eq!(
            honest_full_gradient(&x, &locals[..1]).unwrap(),
            locals[0].grad(&x).unwrap()
        );
    }

    #[test]
    fn lemma2_zero_when_aggregate_is_honest_mean() {
        let shadows = [vec![1.0, 2.0], vec![3.0, 0.0]];
        let refs: Vec<&[f64]> = shadows.iter().map(Vec::as_slice).collect();
        let grads = vec![vec![0.5, 0.5], vec![1.0, 1.0]];
        let r = lemma2_terms(&[2.0, 1.0], &refs, &refs, &grads, Some(0.0)).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert_eq!(r.rhs, 0.0);
        assert!(r.holds);
        assert_eq!(r.comp_err, 0.0);
        let r = lemma2_terms(&[2.0, 1.0], &refs, &refs, &grads, None).unwrap();
        assert!(r.rhs.is_nan());
    }

    #[test]
    fn lemma2_rhs_matches_hand_formula() {
        let shadows = [vec![1.0], vec![2.0], vec![4.0]];
        let vs = [vec![1.5], vec![2.0], vec![3.0]];
        let grads = vec![vec![1.0], vec![2.5], vec![3.5]];
        let s: Vec<&[f64]> = shadows.iter().map(Vec::as_slice).collect();
        let v: Vec<&[f64]> = vs.iter().map(Vec::as_slice).collect();
        let r = lemma2_terms(&[2.0], &s, &v, &grads, Some(2.0)).unwrap();
        // C = {-0.5, 0, 1}, M = {0.5, -0.5, -0.5}, grads mean 7/3.
        let c2 = 0.25 + 0.0 + 1.0;
        let m2 = 0.25 + 0.25 + 0.25;
        let mean = 7.0 / 3.0;
        let het = ((1.0 - mean) * (1.0f64 - mean) + (2.5 - mean) * (2.5 - mean) + (3.5 - mean) * (3.5 - mean)) / 3.0;
        let rhs = 12.0 * 2.0 / 9.0 * (c2 + m2) + 12.0 * 2.0 / 3.0 * het;
        assert!((r.rhs - rhs).abs() < 1e-12);
        assert!((r.lhs - (2.0 - 7.0 / 3.0f64).powi(2)).abs() < 1e-15);
        assert!((r.mean_mom_dev - (6.5 / 3.0 - mean).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn lyapunov_reduces_to_delta_at_zero_step() {
        let s = shard(0, &[(&[1.0], 1), (&[2.0], -1)]);
        let locals = [LocalLoss::new(&s, 0.05)];
        let x = [0.2];
        let v = [vec![5.0]];
        let vr: Vec<&[f64]> = v.iter().map(Vec::as_slice).collect();
        let loss = honest_loss(&x, &locals).unwrap();
        let p = LyapunovParams { loss_star: loss - 0.3, gamma: 0.0, eta: 0.1, alpha: 0.5, kappa: 1.0 };
        let val = lyapunov_value(&x, &vr, &locals, &p).unwrap();
        assert!((val - 0.3).abs() < 1e-15);
        let stale = LyapunovParams { loss_star: loss + 1.0, ..p };
        assert!(matches!(lyapunov_value(&x, &vr, &locals, &stale), Err(Error::State(_))));
    }

    #[test]
    fn account_round_examples() {
        let one = SparseDelta::from_entries(123, vec![(5, 1.0)]).unwrap();
        assert_eq!(account_round(&vec![one; 20], 32), 780);
        assert_eq!(account_round(&[SparseDelta::empty(123)], 32), 0);
        let dense = SparseDelta::from_dense(&vec![1.0; 123]);
        assert_eq!(account_round(&vec![dense; 20], 32), 20 * 123 * 39);
    }
}
