//! The round loop.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::adversary::{
    alie_direction, attack_alie, attack_ipm, attack_lf, attack_sf, ipm_direction, AttackKind,
    RoundView,
};
use crate::data::{partition_label_skew, partition_uniform, Shard};
use crate::protocol::{worker_init, ServerState, WorkerConfig, WorkerState};
use crate::rng::RngStream;
use crate::{AutoOr, DenseVector, Error, Result, SparseDelta};

use super::config::{Algorithm, ByzInit, Partition, RunConfig, DERIVED_TABLE};
use super::dataset::{load_dataset, LoadedData};
use super::diagnostics::{
    account_round, heterogeneity_of, lemma2_terms, lyapunov_value, LocalLoss, LyapunovParams,
};
use super::metrics::RoundMetrics;
use super::theory::{eta_suggestion, gamma_max, smoothness_constants};
use super::trace::TraceWriter;

/// Training loss above which a run is declared diverged.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// Quantities resolved while setting up a run, echoed in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Derived {
    pub dataset_sha256: String,
    pub examples: usize,
    pub shard_sizes: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub byzantine_ids: Vec<usize>,
    pub alpha: f64,
    pub smoothness: f64,
    pub smoothness_tilde: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alie_z: Option<f64>,
    pub attack_k: usize,
}

#[derive(Default)]
pub struct RunOptions {
    /// Evaluate workers on the rayon pool. Results are identical either way.
    pub parallel: bool,
    pub trace: Option<Box<dyn Write + Send>>,
}

impl RunOptions {
    pub fn parallel(parallel: bool) -> Self {
        Self {
            parallel,
            trace: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub x: DenseVector,
    pub metrics: Vec<RoundMetrics>,
    pub diverged: bool,
    /// Config with every default explicit and every `"auto"` resolved.
    pub effective: RunConfig,
    pub derived: Derived,
}

impl RunOutput {
    pub fn final_loss(&self) -> Option<f64> {
        self.metrics.last().map(|m| m.train_loss)
    }

    pub fn metrics_csv(&self) -> String {
        super::metrics::metrics_csv_string(&self.metrics)
    }

    pub fn manifest(&self) -> String {
        manifest_string(&self.effective, &self.derived)
    }
}

/// Effective config followed by an informational `[derived]` table.
pub fn manifest_string(effective: &RunConfig, derived: &Derived) -> String {
    let mut table: toml::Table =
        toml::Table::try_from(effective).expect("run config serialises to a table");
    table.insert(
        DERIVED_TABLE.to_string(),
        toml::Value::try_from(derived).expect("derived values serialise"),
    );
    toml::to_string(&table).expect("manifest serialises")
}

pub struct Simulation {
    config: RunConfig,
    derived: Derived,
    workers: Vec<WorkerState>,
    honest: usize,
    server: ServerState,
    parallel: bool,
    alie_z: f64,
    attack_k: usize,
    uplink_bits: u64,
    t: u64,
    /// Messages received at the current model (aggregated directly by
    /// BR-CSGD).
    messages: Vec<SparseDelta>,
    trace: Option<TraceWriter<Box<dyn Write + Send>>>,
}

impl std::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation")
            .field("round", &self.t)
            .field("n", &self.config.n)
            .field("f", &self.config.f)
            .finish_non_exhaustive()
    }
}

impl Simulation {
    /// Loads the configured dataset and sets up the run.
    pub fn from_config(config: RunConfig, options: RunOptions) -> Result<Self> {
        config.validate()?;
        let data = load_dataset(&config.dataset)?;
        Self::with_data(config, &data, options)
    }

    /// Sets up workers and server and exchanges the initial messages.
    pub fn with_data(config: RunConfig, data: &LoadedData, options: RunOptions) -> Result<Self> {
        config.validate()?;
        if data.dim != config.dim() {
            return Err(Error::config(format!(
                "dataset has dimension {} but the config declares {}",
                data.dim,
                config.dim()
            )));
        }
        let shards = match config.partition {
            Partition::Uniform => partition_uniform(&data.examples, config.n, config.seed)?,
            Partition::LabelSkew => partition_label_skew(&data.examples, config.n, config.seed)?,
        };
        Self::with_shards(config, shards, &data.sha256, data.examples.len(), options)
            .map(|mut sim| {
                sim.config.dataset.set_sha256(data.sha256.clone());
                sim
            })
    }

    /// Sets up a run over explicit shards, one per worker. Byzantine
    /// workers own the last `f` shards.
    pub fn with_shards(
        mut config: RunConfig,
        shards: Vec<Shard>,
        dataset_sha256: &str,
        examples: usize,
        options: RunOptions,
    ) -> Result<Self> {
        config.validate()?;
        let n = config.n;
        let dim = config.dim();
        if shards.len() != n {
            return Err(Error::config(format!("expected {n} shards, got {}", shards.len())));
        }
        if let Some(s) = shards.iter().find(|s| s.is_empty()) {
            return Err(Error::State(format!("worker {} has an empty shard", s.owner)));
        }
        let honest = config.honest_count();
        let lambdas: Vec<f64> = shards
            .iter()
            .map(|s| match config.lambda {
                AutoOr::Auto => 1.0 / s.len() as f64,
                AutoOr::Value(l) => l,
            })
            .collect();

        let locals: Vec<LocalLoss<'_>> = shards[..honest]
            .iter()
            .zip(&lambdas)
            .map(|(s, &l)| LocalLoss::new(s, l))
            .collect();
        let (mut l, mut l_tilde) = smoothness_constants(&locals)?;
        if let Some(v) = config.theory.smoothness {
            l = v;
        }
        if let Some(v) = config.theory.smoothness_tilde {
            l_tilde = v;
        }
        let alpha = config.compressor.alpha(dim);

        let eta = match config.eta {
            AutoOr::Value(e) => e,
            AutoOr::Auto => {
                let kappa = config.kappa_for_theory()?;
                let sigma_sq = config.theory.sigma_sq.expect("validated");
                let delta0 = config.theory.delta0.expect("validated");
                eta_suggestion(l, delta0, alpha, kappa, sigma_sq, honest, config.rounds.max(1))
                    .map_err(|e| Error::Config(e.to_string()))?
            }
        };
        let gmax = config
            .kappa_for_theory()
            .ok()
            .and_then(|kappa| gamma_max(l, l_tilde, kappa, alpha, eta).ok());
        let gamma = match config.gamma {
            AutoOr::Value(g) => g,
            AutoOr::Auto => gmax.ok_or_else(|| {
                Error::config("gamma = \"auto\" could not be resolved from the data")
            })?,
        };
        config.eta = AutoOr::Value(eta);
        config.gamma = AutoOr::Value(gamma);
        config.aggregator = config.effective_aggregator();

        let kind = config.attack.kind;
        let alie_z = if kind == AttackKind::Alie && config.f > 0 {
            Some(config.alie_z()?)
        } else {
            None
        };
        let attack_k = config.attack_k();
        let byz_ids = config.byzantine_ids();

        let derived = Derived {
            dataset_sha256: dataset_sha256.to_string(),
            examples,
            shard_sizes: shards.iter().map(Shard::len).collect(),
            lambdas: lambdas.clone(),
            byzantine_ids: byz_ids,
            alpha,
            smoothness: l,
            smoothness_tilde: l_tilde,
            gamma_max: gmax,
            alie_z,
            attack_k,
        };

        let x0 = vec![0.0; dim];
        let mut init = Vec::with_capacity(n);
        let mut workers = Vec::with_capacity(n);
        for (id, (shard, lambda)) in shards.into_iter().zip(lambdas).enumerate() {
            let labels = if id >= honest { config.attack.labels() } else { Default::default() };
            let wc = WorkerConfig::new(eta, config.compressor, config.batch_size, lambda).with_labels(labels);
            let (w, g0) = worker_init(id, shard, &x0, wc, RngStream::new(config.seed, id))?;
            workers.push(w);
            init.push(g0);
        }

        let server = ServerState::new(x0, n, gamma, config.aggregator)?;
        let mut sim = Simulation {
            config,
            derived,
            workers,
            honest,
            server,
            parallel: options.parallel,
            alie_z: alie_z.unwrap_or(0.0),
            attack_k,
            uplink_bits: 0,
            t: 0,
            messages: Vec::new(),
            trace: options.trace.map(TraceWriter::new),
        };
        let own: Vec<Option<SparseDelta>> = match sim.config.algorithm {
            Algorithm::ByzEf21Sgdm => init.iter().map(|g| Some(SparseDelta::from_dense(g))).collect(),
            Algorithm::BrCsgd => sim
                .workers
                .iter()
                .map(|w| w.brcsgd_init_message().map(Some))
                .collect::<Result<_>>()?,
        };
        let messages = sim.finish_messages(own, true)?;
        sim.receive(messages)?;
        Ok(sim)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn derived(&self) -> &Derived {
        &self.derived
    }

    pub fn round(&self) -> u64 {
        self.t
    }

    pub fn x(&self) -> &[f64] {
        self.server.x()
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn workers(&self) -> &[WorkerState] {
        &self.workers
    }

    pub fn honest_workers(&self) -> &[WorkerState] {
        &self.workers[..self.honest]
    }

    /// Messages received at the current model.
    pub fn last_messages(&self) -> &[SparseDelta] {
        &self.messages
    }

    pub fn uplink_bits(&self) -> u64 {
        self.uplink_bits
    }

    /// Honest workers whose server shadow differs from their own `g`.
    pub fn shadow_mismatches(&self) -> usize {
        self.honest_workers()
            .iter()
            .filter(|w| self.server.shadows()[w.id()] != w.g())
            .count()
    }

    pub fn local_losses(&self) -> Vec<LocalLoss<'_>> {
        self.honest_workers()
            .iter()
            .map(|w| LocalLoss::new(w.shard(), w.config().lambda))
            .collect()
    }

    fn receive(&mut self, messages: Vec<SparseDelta>) -> Result<()> {
        if let Some(trace) = self.trace.as_mut() {
            for (id, m) in messages.iter().enumerate() {
                trace.record(self.t, id, m)?;
            }
        }
        self.uplink_bits += account_round(&messages, self.config.value_bits);
        if self.config.algorithm == Algorithm::ByzEf21Sgdm {
            self.server.absorb(&messages)?;
        }
        self.messages = messages;
        Ok(())
    }

    /// Replaces Byzantine slots of `own` with attack messages. `init`
    /// marks the uncompressed initial exchange.
    fn finish_messages(&self, own: Vec<Option<SparseDelta>>, init: bool) -> Result<Vec<SparseDelta>> {
        let honest: Vec<SparseDelta> = own[..self.honest]
            .iter()
            .map(|m| m.clone().expect("honest workers always produce a message"))
            .collect();
        let byz_ids = &self.derived.byzantine_ids;
        if byz_ids.is_empty() {
            return Ok(honest);
        }
        let dim = self.config.dim();
        if init && self.config.byz_init == ByzInit::Zero {
            let mut out = honest;
            out.extend(byz_ids.iter().map(|_| SparseDelta::empty(dim)));
            return Ok(out);
        }
        let kind = self.config.attack.kind;
        let view = RoundView::new(&honest, byz_ids, self.t);
        let shared = match (kind, init) {
            (AttackKind::Ipm, true) => Some(SparseDelta::from_dense(&ipm_direction(&view, self.config.attack.epsilon)?)),
            (AttackKind::Ipm, false) => Some(attack_ipm(&view, self.config.attack.epsilon, self.attack_k)?),
            (AttackKind::Alie, true) => Some(SparseDelta::from_dense(&alie_direction(&view, self.alie_z)?)),
            (AttackKind::Alie, false) => Some(attack_alie(&view, self.alie_z, self.attack_k)?),
            _ => None,
        };
        let mut out = honest;
        for (&id, slot) in byz_ids.iter().zip(&own[self.honest..]) {
            let msg = match kind {
                AttackKind::Ipm | AttackKind::Alie => shared.clone().expect("shared attack message"),
                AttackKind::Sf => attack_sf(slot.as_ref().expect("sf runs its own pipeline")),
                AttackKind::None | AttackKind::Lf => slot
                    .clone()
                    .ok_or_else(|| Error::Attack(format!("worker {id} produced no message")))?,
            };
            out.push(msg);
        }
        Ok(out)
    }

    /// Runs every worker that needs its own pipeline at model `x`.
    fn worker_messages(&mut self, x: &[f64]) -> Result<Vec<SparseDelta>> {
        let honest = self.honest;
        let kind = self.config.attack.kind;
        let algorithm = self.config.algorithm;
        let step = |w: &mut WorkerState| -> Result<Option<SparseDelta>> {
            let byzantine = w.id() >= honest;
            if byzantine && matches!(kind, AttackKind::Ipm | AttackKind::Alie) {
                return Ok(None);
            }
            let msg = match algorithm {
                Algorithm::ByzEf21Sgdm if byzantine && kind == AttackKind::Lf => attack_lf(w, x)?,
                Algorithm::ByzEf21Sgdm => w.worker_round(x)?,
                Algorithm::BrCsgd => w.brcsgd_worker_round(x)?,
            };
            Ok(Some(msg))
        };
        let own: Vec<Result<Option<SparseDelta>>> = if self.parallel {
            self.workers.par_iter_mut().map(step).collect()
        } else {
            self.workers.iter_mut().map(step).collect()
        };
        let own = own.into_iter().collect::<Result<Vec<_>>>()?;
        self.finish_messages(own, false)
    }

    /// Aggregate the server would step with at the current model.
    pub fn current_aggregate(&self) -> Result<DenseVector> {
        match self.config.algorithm {
            Algorithm::ByzEf21Sgdm => self.server.aggregate(),
            Algorithm::BrCsgd => self.server.brcsgd_aggregate(&self.messages),
        }
    }

    /// Metrics at the current model given the aggregate `g_agg`.
    pub fn evaluate(&self, g_agg: &[f64]) -> Result<RoundMetrics> {
        let x = self.server.x();
        let locals = self.local_losses();
        let eval = |l: &LocalLoss<'_>| -> Result<(f64, DenseVector)> { Ok((l.loss(x)?, l.grad(x)?)) };
        let per_worker: Vec<Result<(f64, DenseVector)>> = if self.parallel {
            locals.par_iter().map(eval).collect()
        } else {
            locals.iter().map(eval).collect()
        };
        let per_worker = per_worker.into_iter().collect::<Result<Vec<_>>>()?;
        let h = per_worker.len() as f64;
        let train_loss = per_worker.iter().map(|(l, _)| l).sum::<f64>() / h;
        let grads: Vec<DenseVector> = per_worker.into_iter().map(|(_, g)| g).collect();
        let mut grad_mean = vec![0.0; x.len()];
        for g in &grads {
            for (m, v) in grad_mean.iter_mut().zip(g) {
                *m += v;
            }
        }
        grad_mean.iter_mut().for_each(|m| *m /= h);
        let grad_norm_sq = crate::linalg::norm_sq(&grad_mean);

        let mut row = RoundMetrics {
            round: self.t,
            train_loss,
            grad_norm_sq,
            heterogeneity: heterogeneity_of(&grads)?,
            uplink_bits: self.uplink_bits,
            lemma2_lhs: f64::NAN,
            lemma2_rhs: f64::NAN,
            comp_err: f64::NAN,
            mom_dev: f64::NAN,
            mean_mom_dev: f64::NAN,
        };
        if self.config.algorithm == Algorithm::ByzEf21Sgdm {
            let shadows: Vec<&[f64]> = self.server.shadows()[..self.honest]
                .iter()
                .map(Vec::as_slice)
                .collect();
            let vs: Vec<&[f64]> = self.honest_workers().iter().map(WorkerState::v).collect();
            let report = lemma2_terms(g_agg, &shadows, &vs, &grads, self.config.kappa)?;
            row.lemma2_lhs = report.lhs;
            row.lemma2_rhs = report.rhs;
            row.comp_err = report.comp_err;
            row.mom_dev = report.mom_dev;
            row.mean_mom_dev = report.mean_mom_dev;
        }
        Ok(row)
    }

    /// Lyapunov value at the current state.
    pub fn lyapunov(&self, loss_star: f64) -> Result<f64> {
        let vs: Vec<&[f64]> = self.honest_workers().iter().map(WorkerState::v).collect();
        let params = LyapunovParams {
            loss_star,
            gamma: self.server.gamma(),
            eta: self.config.eta.value().expect("resolved"),
            alpha: self.derived.alpha,
            kappa: self.config.kappa_for_theory().unwrap_or(0.0),
        };
        lyapunov_value(self.server.x(), &vs, &self.local_losses(), &params)
    }

    /// Steps the server with `g_agg` and collects the next messages.
    pub fn advance_with(&mut self, g_agg: &[f64]) -> Result<()> {
        let x = self.server.apply_step(g_agg)?.to_vec();
        self.t += 1;
        let messages = self.worker_messages(&x)?;
        self.receive(messages)
    }

    pub fn advance(&mut self) -> Result<()> {
        let g = self.current_aggregate()?;
        self.advance_with(&g)
    }

    fn due(&self, t: u64) -> bool {
        t % self.config.eval_every == 0 || t == self.config.rounds
    }

    /// Runs all configured rounds, evaluating metrics on schedule.
    pub fn run(mut self) -> Result<RunOutput> {
        let rounds = self.config.rounds;
        let mut metrics = Vec::new();
        let mut diverged = false;
        if rounds > 0 {
            loop {
                let g = self.current_aggregate()?;
                if self.due(self.t) {
                    let row = self.evaluate(&g)?;
                    if !row.train_loss.is_finite() || row.train_loss > DIVERGENCE_LOSS {
                        diverged = true;
                        if row.train_loss.is_finite() {
                            metrics.push(row);
                        }
                        break;
                    }
                    metrics.push(row);
                }
                if self.t == rounds {
                    break;
                }
                self.advance_with(&g)?;
            }
        }
        if let Some(trace) = self.trace.as_mut() {
            trace.flush()?;
        }
        Ok(RunOutput {
            x: self.server.x().to_vec(),
            metrics,
            diverged,
            effective: self.config,
            derived: self.derived,
        })
    }
}

/// Loads data, runs and returns the output.
pub fn run(config: RunConfig, options: RunOptions) -> Result<RunOutput> {
    Simulation::from_config(config, options)?.run()
}

/// Runs on preloaded data.
pub fn run_with_data(config: RunConfig, data: &LoadedData, options: RunOptions) -> Result<RunOutput> {
    Simulation::with_data(config, data, options)?.run()
}
