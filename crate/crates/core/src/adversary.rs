//! Byzantine message generation: sign flipping (SF), label flipping (LF),
//! inner product manipulation (IPM) and "a little is enough" (ALIE).
//!
//! SF and LF attackers run their own worker pipelines. IPM and ALIE read the
//! honest messages of the current round through a [`RoundView`] and emit one
//! shared message for every Byzantine worker.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::compressors::{compress_topk, SparseDelta};
use crate::data::LabelMode;
use crate::protocol::WorkerState;
use crate::{AutoOr, DenseVector, Error, Result};

pub const DEFAULT_IPM_EPSILON: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    None,
    Sf,
    Lf,
    Ipm,
    Alie,
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttackKind::None => "none",
            AttackKind::Sf => "sf",
            AttackKind::Lf => "lf",
            AttackKind::Ipm => "ipm",
            AttackKind::Alie => "alie",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub z: AutoOr<f64>,
    /// Top-k budget of IPM and ALIE messages; `None` uses the honest k.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

fn default_epsilon() -> f64 {
    DEFAULT_IPM_EPSILON
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self::new(AttackKind::None)
    }
}

impl AttackSpec {
    pub fn new(kind: AttackKind) -> Self {
        Self {
            kind,
            epsilon: DEFAULT_IPM_EPSILON,
            z: AutoOr::Auto,
            k: None,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config(format!(
                "attack.epsilon = {} must be positive",
                self.epsilon
            )));
        }
        if let AutoOr::Value(z) = self.z {
            if !(z > 0.0 && z.is_finite()) {
                return Err(Error::config(format!("attack.z = {z} must be positive")));
            }
        }
        if let Some(k) = self.k {
            if !(1..=dim).contains(&k) {
                return Err(Error::config(format!("attack.k = {k} is not in [1, {dim}]")));
            }
        }
        Ok(())
    }

    /// Label mode of a Byzantine worker's own pipeline.
    pub fn labels(&self) -> LabelMode {
        match self.kind {
            AttackKind::Lf => LabelMode::Flipped,
            _ => LabelMode::Honest,
        }
    }
}

/// What an omniscient attacker sees in one round.
#[derive(Debug, Clone, Copy)]
pub struct RoundView<'a> {
    pub honest_deltas: &'a [SparseDelta],
    pub byz_ids: &'a [usize],
    pub round: u64,
}

impl<'a> RoundView<'a> {
    pub fn new(honest_deltas: &'a [SparseDelta], byz_ids: &'a [usize], round: u64) -> Self {
        Self {
            honest_deltas,
            byz_ids,
            round,
        }
    }

    pub fn dim(&self) -> Option<usize> {
        self.honest_deltas.first().map(SparseDelta::dim)
    }

    /// Honest deltas as dense vectors, in worker order.
    pub fn dense(&self) -> Vec<DenseVector> {
        self.honest_deltas.iter().map(SparseDelta::to_dense).collect()
    }
}

pub fn attack_sf(own_honest_delta: &SparseDelta) -> SparseDelta {
    own_honest_delta.negated()
}

/// Runs the attacker's flipped-label pipeline one round.
pub fn attack_lf(state: &mut WorkerState, x_new: &[f64]) -> Result<SparseDelta> {
    if state.config().labels != LabelMode::Flipped {
        return Err(Error::Attack(format!(
            "worker {} is not configured with flipped labels",
            state.id()
        )));
    }
    state.worker_round(x_new)
}

fn honest_mean(view: &RoundView<'_>) -> Result<DenseVector> {
    let dense = view.dense();
    let dim = view
        .dim()
        .ok_or_else(|| Error::Attack("no honest messages to observe".into()))?;
    let mut mean = vec![0.0; dim];
    for d in &dense {
        for (m, x) in mean.iter_mut().zip(d) {
            *m += x;
        }
    }
    let inv = 1.0 / dense.len() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    Ok(mean)
}

/// `-epsilon * mean(honest)` before the Top-k step.
pub fn ipm_direction(view: &RoundView<'_>, epsilon: f64) -> Result<DenseVector> {
    let mut mean = honest_mean(view)?;
    mean.iter_mut().for_each(|m| *m *= -epsilon);
    Ok(mean)
}

pub fn attack_ipm(view: &RoundView<'_>, epsilon: f64, k: usize) -> Result<SparseDelta> {
    compress_topk(&ipm_direction(view, epsilon)?, k)
}

/// `mu - z * sigma` with population statistics, before the Top-k step.
pub fn alie_direction(view: &RoundView<'_>, z: f64) -> Result<DenseVector> {
    if view.honest_deltas.len() < 2 {
        return Err(Error::Attack(format!(
            "alie needs at least 2 honest messages, got {}",
            view.honest_deltas.len()
        )));
    }
    let mean = honest_mean(view)?;
    let dense = view.dense();
    let inv = 1.0 / dense.len() as f64;
    let mut var = vec![0.0; mean.len()];
    for d in &dense {
        for ((s, x), m) in var.iter_mut().zip(d).zip(&mean) {
            *s += (x - m) * (x - m);
        }
    }
    Ok(mean
        .iter()
        .zip(&var)
        .map(|(m, s)| m - z * (s * inv).sqrt())
        .collect())
}

pub fn attack_alie(view: &RoundView<'_>, z: f64, k: usize) -> Result<SparseDelta> {
    compress_topk(&alie_direction(view, z)?, k)
}

/// Default ALIE multiplier for `n` workers of which `f` are Byzantine:
/// `Phi^{-1}((n - f - s) / (n - f))` with `s = floor(n/2 + 1) - f`.
///
/// The result is negative when `s` exceeds half the honest count.
pub fn resolve_alie_z(n: usize, f: usize) -> Result<f64> {
    if f == 0 || f >= n {
        return Err(Error::config(format!(
            "alie needs 0 < f < n, got n = {n}, f = {f}"
        )));
    }
    let s = (n / 2 + 1) as f64 - f as f64;
    let honest = (n - f) as f64;
    let p = (honest - s) / honest;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::config(format!(
            "alie quantile level {p} for n = {n}, f = {f} is outside (0, 1); set attack.z"
        )));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(p))
}
