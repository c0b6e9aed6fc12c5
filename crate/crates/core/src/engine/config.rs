//! Run configuration: TOML schema, dotted-path overrides and validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversary::{resolve_alie_z, AttackKind, AttackSpec};
use crate::aggregators::AggregatorSpec;
use crate::compressors::{CompressorSpec, DEFAULT_VALUE_BITS};
use crate::data::A9A_DIM;
use crate::{AutoOr, Error, Result};

pub const DEFAULT_EVAL_EVERY: u64 = 10;
pub const DEFAULT_ETA: f64 = 0.01;

/// Name of the informational table a manifest carries next to the config.
pub const DERIVED_TABLE: &str = "derived";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Algorithm {
    #[default]
    #[serde(rename = "byz-ef21-sgdm")]
    ByzEf21Sgdm,
    #[serde(rename = "br-csgd")]
    BrCsgd,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::ByzEf21Sgdm => "byz-ef21-sgdm",
            Algorithm::BrCsgd => "br-csgd",
        })
    }
}

/// What Byzantine workers send before the first server step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ByzInit {
    #[default]
    Attack,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Partition {
    #[default]
    Uniform,
    /// Examples sorted by label before the contiguous split.
    LabelSkew,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    Libsvm {
        path: PathBuf,
        dim: usize,
        #[serde(default)]
        normalize: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sha256: Option<String>,
    },
    Synthetic {
        examples: usize,
        dim: usize,
        #[serde(default)]
        separation: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sha256: Option<String>,
    },
    A9aLike {
        #[serde(default)]
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sha256: Option<String>,
    },
}

impl DatasetSpec {
    pub fn dim(&self) -> usize {
        match self {
            DatasetSpec::Libsvm { dim, .. } | DatasetSpec::Synthetic { dim, .. } => *dim,
            DatasetSpec::A9aLike { .. } => A9A_DIM,
        }
    }

    pub fn expected_sha256(&self) -> Option<&str> {
        match self {
            DatasetSpec::Libsvm { sha256, .. }
            | DatasetSpec::Synthetic { sha256, .. }
            | DatasetSpec::A9aLike { sha256, .. } => sha256.as_deref(),
        }
    }

    pub fn set_sha256(&mut self, hash: String) {
        match self {
            DatasetSpec::Libsvm { sha256, .. }
            | DatasetSpec::Synthetic { sha256, .. }
            | DatasetSpec::A9aLike { sha256, .. } => *sha256 = Some(hash),
        }
    }
}

/// Inputs of the step-size calculator that cannot be derived from the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TheorySpec {
    /// Variance bound of the stochastic gradients.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_sq: Option<f64>,
    /// Initial suboptimality `L_H(x0) - L_H*`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta0: Option<f64>,
    /// Overrides the data-derived smoothness `L`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothness: Option<f64>,
    /// Overrides the data-derived `L~`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothness_tilde: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    #[serde(default)]
    pub f: usize,
    #[serde(default)]
    pub seed: u64,
    pub rounds: u64,
    pub gamma: AutoOr<f64>,
    #[serde(default = "default_eta")]
    pub eta: AutoOr<f64>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub algorithm: Algorithm,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    /// `"auto"` gives worker `i` the regulariser `1 / m_i`.
    #[serde(default)]
    pub lambda: AutoOr<f64>,
    #[serde(default)]
    pub byz_init: ByzInit,
    #[serde(default = "default_value_bits")]
    pub value_bits: u32,
    #[serde(default)]
    pub partition: Partition,
    /// Robustness constant used by the aggregation-error check and the
    /// step-size calculator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    /// Optimal honest loss, for the Lyapunov diagnostic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_star: Option<f64>,
    pub compressor: CompressorSpec,
    pub aggregator: AggregatorSpec,
    #[serde(default)]
    pub attack: AttackSpec,
    #[serde(default)]
    pub theory: TheorySpec,
    pub dataset: DatasetSpec,
}

fn default_eta() -> AutoOr<f64> {
    AutoOr::Value(DEFAULT_ETA)
}

fn default_batch_size() -> usize {
    1
}

fn default_eval_every() -> u64 {
    DEFAULT_EVAL_EVERY
}

fn default_value_bits() -> u32 {
    DEFAULT_VALUE_BITS
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_table(table)
    }

    /// Deserialises a table, ignoring a manifest's `[derived]` section.
    pub fn from_table(mut table: toml::Table) -> Result<Self> {
        table.remove(DERIVED_TABLE);
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    pub fn dim(&self) -> usize {
        self.dataset.dim()
    }

    pub fn honest_count(&self) -> usize {
        self.n - self.f
    }

    /// Worker ids `n - f .. n`.
    pub fn byzantine_ids(&self) -> Vec<usize> {
        (self.n - self.f..self.n).collect()
    }

    /// Top-k budget of IPM and ALIE messages.
    pub fn attack_k(&self) -> usize {
        self.attack.k.unwrap_or(match self.compressor.kind {
            crate::CompressorKind::Identity => self.dim(),
            _ => self.compressor.k,
        })
    }

    /// ALIE multiplier with `"auto"` resolved.
    pub fn alie_z(&self) -> Result<f64> {
        match self.attack.z {
            AutoOr::Value(z) => Ok(z),
            AutoOr::Auto => resolve_alie_z(self.n, self.f),
        }
    }

    /// Checks everything that can be checked without loading data.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("n must be at least 1"));
        }
        if 2 * self.f >= self.n && self.f > 0 {
            return Err(Error::config(format!(
                "f = {} violates f < n/2 for n = {}",
                self.f, self.n
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every must be at least 1"));
        }
        if self.value_bits == 0 {
            return Err(Error::config("value_bits must be at least 1"));
        }
        if let AutoOr::Value(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::config(format!("gamma = {g} must be positive")));
            }
        }
        if let AutoOr::Value(eta) = self.eta {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(Error::config(format!("eta = {eta} is not in (0, 1]")));
            }
        }
        if let AutoOr::Value(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::config(format!("lambda = {l} must be nonnegative")));
            }
        }
        if let Some(k) = self.kappa {
            if !(k >= 0.0 && k.is_finite()) {
                return Err(Error::config(format!("kappa = {k} must be a nonnegative number")));
            }
        }
        let dim = self.dim();
        if dim == 0 {
            return Err(Error::config("dataset.dim must be at least 1"));
        }
        self.compressor.validate(dim)?;
        if self.algorithm == Algorithm::BrCsgd && !self.compressor.is_unbiased() {
            return Err(Error::config(
                "algorithm = \"br-csgd\" requires compressor.kind = \"rand-k\" or \"identity\"",
            ));
        }
        let agg = self.effective_aggregator();
        agg.validate(self.n)?;
        if agg.use_nnm && agg.trim() >= self.n {
            return Err(Error::config("aggregator.f must be below n for nnm"));
        }
        self.attack.validate(dim)?;
        if self.attack.kind == AttackKind::Alie && self.f > 0 {
            if self.honest_count() < 2 {
                return Err(Error::config("alie needs at least 2 honest workers"));
            }
            self.alie_z()?;
        }
        if self.eta.is_auto() {
            if self.theory.sigma_sq.is_none() || self.theory.delta0.is_none() {
                return Err(Error::config(
                    "eta = \"auto\" requires theory.sigma_sq and theory.delta0",
                ));
            }
            self.kappa_for_theory()?;
        }
        if self.gamma.is_auto() {
            self.kappa_for_theory()?;
        }
        if let DatasetSpec::Synthetic { examples, .. } = self.dataset {
            if examples < self.n {
                return Err(Error::config(format!(
                    "dataset.examples = {examples} is fewer than n = {}",
                    self.n
                )));
            }
        }
        Ok(())
    }

    /// Kappa for the calculator; zero is implied when there are no
    /// Byzantine workers.
    pub fn kappa_for_theory(&self) -> Result<f64> {
        match (self.kappa, self.f) {
            (Some(k), _) => Ok(k),
            (None, 0) => Ok(0.0),
            (None, _) => Err(Error::config(
                "gamma or eta = \"auto\" with f > 0 requires kappa",
            )),
        }
    }

    /// Aggregator with its trimming level defaulted to the run's `f`.
    pub fn effective_aggregator(&self) -> AggregatorSpec {
        let mut agg = self.aggregator;
        agg.f.get_or_insert(self.f);
        agg
    }
}

/// Sets `path` (dotted, e.g. `aggregator.rule`) to `value` inside `table`.
///
/// The value is read as a TOML literal when possible and as a bare string
/// otherwise, so `attack.kind=sf` and `gamma=0.1` both work.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override `{assignment}` is not key=value")))?;
    let path = path.trim();
    let raw = raw.trim();
    if path.is_empty() {
        return Err(Error::config(format!("override `{assignment}` has an empty key")));
    }
    let value = parse_literal(raw);
    let keys: Vec<&str> = path.split('.').collect();
    let (last, parents) = keys.split_last().expect("nonempty path");
    let mut cursor = table;
    for key in parents {
        let entry = cursor
            .entry((*key).to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override `{path}`: `{key}` is not a table")))?;
    }
    cursor.insert((*last).to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Recursively merges `overlay` onto `base`; tables merge, values replace.
pub fn merge_tables(base: &mut toml::Table, overlay: &toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            _ => {
                base.insert(key.clone(), value.clone());
            }
        }
    }
}
