//! l2-regularised logistic loss `log(1 + exp(-b <a, x>)) + lambda |x|^2`.

use std::borrow::Borrow;

use crate::linalg::norm_sq;
use crate::{Error, Result};

use super::Example;

/// Whether labels are used as stored or negated (label-flipping attack).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelMode {
    #[default]
    Honest,
    Flipped,
}

impl LabelMode {
    fn sign(self, label: i8) -> f64 {
        match self {
            LabelMode::Honest => f64::from(label),
            LabelMode::Flipped => -f64::from(label),
        }
    }
}

/// `log(1 + exp(t))` without overflow for large `|t|`.
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn check_batch<E>(x: &[f64], batch: &[E]) -> Result<()>
where
    E: Borrow<Example>,
{
    if batch.is_empty() {
        return Err(Error::argument("loss oracle needs a nonempty batch"));
    }
    if let Some(dim) = batch
        .iter()
        .map(|e| Borrow::<Example>::borrow(e).dim())
        .find(|&d| d != x.len())
    {
        return Err(Error::argument(format!(
            "example has dimension {dim} but model has dimension {}",
            x.len()
        )));
    }
    Ok(())
}

/// Mean logistic loss over `batch` plus `lambda |x|^2`.
pub fn logistic_loss<E>(x: &[f64], batch: &[E], lambda: f64) -> Result<f64>
where
    E: Borrow<Example>,
{
    check_batch(x, batch)?;
    let data: f64 = batch
        .iter()
        .map(|e| {
            let e = e.borrow();
            softplus(-f64::from(e.label) * e.margin(x))
        })
        .sum();
    Ok(data / batch.len() as f64 + lambda * norm_sq(x))
}

/// Gradient of [`logistic_loss`]: mean of `-b sigmoid(-b <a, x>) a`, plus `2 lambda x`.
pub fn logistic_grad<E>(x: &[f64], batch: &[E], lambda: f64) -> Result<Vec<f64>>
where
    E: Borrow<Example>,
{
    let mut out = vec![0.0; x.len()];
    logistic_grad_into(&mut out, x, batch, lambda, LabelMode::Honest)?;
    Ok(out)
}

/// Writes the gradient into `out`, optionally with every label negated.
pub fn logistic_grad_into<E>(
    out: &mut [f64],
    x: &[f64],
    batch: &[E],
    lambda: f64,
    labels: LabelMode,
) -> Result<()>
where
    E: Borrow<Example>,
{
    check_batch(x, batch)?;
    if out.len() != x.len() {
        return Err(Error::argument("gradient buffer has the wrong dimension"));
    }
    out.fill(0.0);
    let inv = 1.0 / batch.len() as f64;
    for e in batch {
        let e = e.borrow();
        let b = labels.sign(e.label);
        let coef = -b * sigmoid(-b * e.margin(x)) * inv;
        for &(i, v) in e.features.entries() {
            out[i as usize] += coef * v;
        }
    }
    for (o, xi) in out.iter_mut().zip(x) {
        *o += 2.0 * lambda * xi;
    }
    Ok(())
}

/// Upper bound on the smoothness constant of the loss over `examples`:
/// `max |a|^2 / 4 + 2 lambda`.
pub fn smoothness_bound(examples: &[Example], lambda: f64) -> f64 {
    let max_row = examples
        .iter()
        .map(|e| e.features.norm_sq())
        .fold(0.0, f64::max);
    0.25 * max_row + 2.0 * lambda
}
