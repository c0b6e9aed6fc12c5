//! Worker and server state machines of Byz-EF21-SGDM, plus the BR-CSGD
//! baseline (compressed stochastic gradients, no error feedback).
//!
//! A worker's randomness for round `t` comes from `rng.for_round(t)`; the
//! initial message uses round 0.

use crate::aggregators::{aggregate, AggregatorSpec};
use crate::compressors::{CompressorSpec, SparseDelta};
use crate::data::{logistic_grad_into, sample_batch, LabelMode, Shard};
use crate::rng::RngStream;
use crate::{DenseVector, Error, Result};

/// Per-worker optimiser settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkerConfig {
    pub eta: f64,
    pub compressor: CompressorSpec,
    pub batch_size: usize,
    /// Regulariser of this worker's local loss.
    pub lambda: f64,
    pub labels: LabelMode,
}

impl WorkerConfig {
    pub fn new(eta: f64, compressor: CompressorSpec, batch_size: usize, lambda: f64) -> Self {
        Self {
            eta,
            compressor,
            batch_size,
            lambda,
            labels: LabelMode::Honest,
        }
    }

    pub fn with_labels(mut self, labels: LabelMode) -> Self {
        self.labels = labels;
        self
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::config(format!("eta = {} is not in (0, 1]", self.eta)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::config(format!("lambda = {} must be nonnegative", self.lambda)));
        }
        self.compressor.validate(dim)
    }
}

#[derive(Debug, Clone)]
pub struct WorkerState {
    id: usize,
    v: DenseVector,
    g: DenseVector,
    shard: Shard,
    config: WorkerConfig,
    rng: RngStream,
    round: u64,
    /// Stochastic gradient drawn in the latest round.
    last_grad: DenseVector,
}

impl WorkerState {
    pub fn id(&self) -> usize {
        self.id
    }

    /// Local momentum `v_i`.
    pub fn v(&self) -> &[f64] {
        &self.v
    }

    /// EF21 shadow `g_i`.
    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn shard(&self) -> &Shard {
        &self.shard
    }

    pub fn config(&self) -> &WorkerConfig {
        &self.config
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn last_grad(&self) -> &[f64] {
        &self.last_grad
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::argument(format!(
                "worker {} expects dimension {} but got {}",
                self.id,
                self.dim(),
                x.len()
            )));
        }
        Ok(())
    }

    /// Draws a batch for `round` and writes the stochastic gradient at `x`
    /// into `last_grad`. Returns the generator for any further draws.
    fn stochastic_grad(&mut self, x: &[f64], round: u64) -> Result<rand_chacha::ChaCha8Rng> {
        let mut rng = self.rng.for_round(round);
        let batch = sample_batch(&self.shard, self.config.batch_size, &mut rng)?;
        logistic_grad_into(&mut self.last_grad, x, &batch, self.config.lambda, self.config.labels)?;
        Ok(rng)
    }

    /// Momentum, compression and shadow update at the new model `x_new`.
    pub fn worker_round(&mut self, x_new: &[f64]) -> Result<SparseDelta> {
        self.check_dim(x_new)?;
        self.round += 1;
        let mut rng = self.stochastic_grad(x_new, self.round)?;
        let eta = self.config.eta;
        for (v, gr) in self.v.iter_mut().zip(&self.last_grad) {
            *v = (1.0 - eta) * *v + eta * gr;
        }
        let target: Vec<f64> = self.v.iter().zip(&self.g).map(|(v, g)| v - g).collect();
        let c = self.config.compressor.apply(&target, &mut rng)?;
        c.add_into(&mut self.g);
        Ok(c)
    }

    /// BR-CSGD message: the compressed stochastic gradient at `x_new`.
    ///
    /// Momentum and shadow are left untouched.
    pub fn brcsgd_worker_round(&mut self, x_new: &[f64]) -> Result<SparseDelta> {
        if !self.config.compressor.is_unbiased() {
            return Err(Error::config(
                "br-csgd requires an unbiased compressor (rand-k or identity)",
            ));
        }
        self.check_dim(x_new)?;
        self.round += 1;
        let mut rng = self.stochastic_grad(x_new, self.round)?;
        self.config.compressor.apply(&self.last_grad, &mut rng)
    }

    /// BR-CSGD message at the initial model: the compressed initial
    /// stochastic gradient, with the compressor continuing the round-0
    /// stream exactly where the batch draw left it.
    pub fn brcsgd_init_message(&self) -> Result<SparseDelta> {
        if !self.config.compressor.is_unbiased() {
            return Err(Error::config(
                "br-csgd requires an unbiased compressor (rand-k or identity)",
            ));
        }
        if self.round != 0 {
            return Err(Error::State(format!(
                "worker {} already left the initial round",
                self.id
            )));
        }
        let mut rng = self.rng.for_round(0);
        sample_batch(&self.shard, self.config.batch_size, &mut rng)?;
        self.config.compressor.apply(&self.v, &mut rng)
    }
}

/// Creates a worker at `x0` with `v0 = g0 =` one stochastic gradient.
///
/// The returned `g0` is what the worker transmits, uncompressed, before the
/// first server step.
pub fn worker_init(
    id: usize,
    shard: Shard,
    x0: &[f64],
    config: WorkerConfig,
    rng: RngStream,
) -> Result<(WorkerState, DenseVector)> {
    config.validate(x0.len())?;
    if shard.is_empty() {
        return Err(Error::State(format!("worker {id} has an empty shard")));
    }
    let dim = x0.len();
    let mut state = WorkerState {
        id,
        v: vec![0.0; dim],
        g: vec![0.0; dim],
        shard,
        config,
        rng,
        round: 0,
        last_grad: vec![0.0; dim],
    };
    state.check_dim(x0)?;
    state.stochastic_grad(x0, 0)?;
    state.v.copy_from_slice(&state.last_grad);
    state.g.copy_from_slice(&state.last_grad);
    let g0 = state.g.clone();
    Ok((state, g0))
}

/// Server side: model, per-worker shadows and the aggregation rule.
#[derive(Debug, Clone)]
pub struct ServerState {
    x: DenseVector,
    shadows: Vec<DenseVector>,
    gamma: f64,
    aggregator: AggregatorSpec,
    round: u64,
}

impl ServerState {
    /// Server for `n` workers with all shadows at zero.
    pub fn new(x0: DenseVector, n: usize, gamma: f64, aggregator: AggregatorSpec) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::config(format!("gamma = {gamma} must be a nonnegative number")));
        }
        aggregator.validate(n)?;
        let dim = x0.len();
        Ok(Self {
            x: x0,
            shadows: vec![vec![0.0; dim]; n],
            gamma,
            aggregator,
            round: 0,
        })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn shadows(&self) -> &[DenseVector] {
        &self.shadows
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn aggregator(&self) -> &AggregatorSpec {
        &self.aggregator
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    fn check_messages(&self, deltas: &[SparseDelta]) -> Result<()> {
        if deltas.len() != self.shadows.len() {
            return Err(Error::Protocol(format!(
                "expected {} messages, got {}",
                self.shadows.len(),
                deltas.len()
            )));
        }
        if let Some(i) = deltas.iter().position(|d| d.dim() != self.x.len()) {
            return Err(Error::Protocol(format!(
                "message from worker {i} has dimension {} but the model has {}",
                deltas[i].dim(),
                self.x.len()
            )));
        }
        Ok(())
    }

    /// Adds every worker's delta to its shadow, Byzantine or not.
    pub fn absorb(&mut self, deltas: &[SparseDelta]) -> Result<()> {
        self.check_messages(deltas)?;
        for (shadow, delta) in self.shadows.iter_mut().zip(deltas) {
            delta.add_into(shadow);
        }
        Ok(())
    }

    /// `F(shadows)`.
    pub fn aggregate(&self) -> Result<DenseVector> {
        aggregate(&self.aggregator, &self.shadows)
    }

    /// `x <- x - gamma * g` for a precomputed aggregate `g`.
    pub fn apply_step(&mut self, g: &[f64]) -> Result<&[f64]> {
        if g.len() != self.x.len() {
            return Err(Error::argument("aggregate has the wrong dimension"));
        }
        for (x, gi) in self.x.iter_mut().zip(g) {
            *x -= self.gamma * gi;
        }
        self.round += 1;
        Ok(&self.x)
    }

    /// Aggregates the current shadows and takes one step.
    pub fn step(&mut self) -> Result<&[f64]> {
        let g = self.aggregate()?;
        self.apply_step(&g)
    }

    /// Absorbs one delta per worker, aggregates and steps.
    pub fn server_round(&mut self, deltas: &[SparseDelta]) -> Result<DenseVector> {
        self.absorb(deltas)?;
        self.step().map(<[f64]>::to_vec)
    }

    /// BR-CSGD step: aggregates the received messages themselves.
    pub fn brcsgd_round(&mut self, messages: &[SparseDelta]) -> Result<DenseVector> {
        let g = self.brcsgd_aggregate(messages)?;
        self.apply_step(&g).map(<[f64]>::to_vec)
    }

    pub fn brcsgd_aggregate(&self, messages: &[SparseDelta]) -> Result<DenseVector> {
        self.check_messages(messages)?;
        let dense: Vec<DenseVector> = messages.iter().map(SparseDelta::to_dense).collect();
        aggregate(&self.aggregator, &dense)
    }
}
