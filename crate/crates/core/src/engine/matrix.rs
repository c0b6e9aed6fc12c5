//! Experiment matrices: variants x aggregators x attacks x step sizes x
//! seeds, one metrics CSV per run plus an index.
//!
//! Run directories are `<out>/<variant>/<aggregator>__<attack>/gamma_<step>/seed_<seed>/`.
//! A run whose manifest already exists is not repeated.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::Deserialize;

use crate::{AutoOr, Error, Result};

use super::config::{merge_tables, DatasetSpec, RunConfig};
use super::dataset::{load_dataset, LoadedData};
use super::sim::{run_with_data, RunOptions};
use super::{write_run_outputs, MANIFEST_FILE, METRICS_FILE};

pub const INDEX_FILE: &str = "index.csv";
pub const BEST_FILE: &str = "best.csv";
pub const INDEX_HEADER: &str = "variant,aggregator,attack,step_size,seed,csv,final_loss,diverged,selected";
pub const BEST_HEADER: &str = "variant,aggregator,attack,step_size,mean_final_loss";

pub const DEFAULT_SEEDS: [u64; 3] = [0, 1, 2];
pub const DEFAULT_STEP_SIZES: [f64; 3] = [0.1, 0.01, 0.001];

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum BaseConfig {
    Path(PathBuf),
    Inline(toml::Table),
}

/// A named set of overrides applied on top of the base config.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    #[serde(default)]
    pub set: toml::Table,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    pub base: BaseConfig,
    /// Labels such as `"cwtm+nnm"` or `[aggregator]` tables.
    pub aggregators: Vec<toml::Value>,
    /// Labels such as `"sf"` or `[attack]` tables.
    pub attacks: Vec<toml::Value>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_step_sizes")]
    pub step_sizes: Vec<f64>,
    #[serde(default)]
    pub variants: Vec<Variant>,
}

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

fn default_step_sizes() -> Vec<f64> {
    DEFAULT_STEP_SIZES.to_vec()
}

impl MatrixSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    fn base_table(&self, base_dir: &Path) -> Result<toml::Table> {
        match &self.base {
            BaseConfig::Inline(t) => Ok(t.clone()),
            BaseConfig::Path(p) => {
                let path = if p.is_absolute() { p.clone() } else { base_dir.join(p) };
                let text = fs::read_to_string(&path)?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
            }
        }
    }

    /// Every run of the matrix, in a fixed order.
    pub fn expand(&self, base_dir: &Path) -> Result<Vec<MatrixRun>> {
        if self.aggregators.is_empty() || self.attacks.is_empty() {
            return Err(Error::config("matrix needs at least one aggregator and one attack"));
        }
        if self.seeds.is_empty() || self.step_sizes.is_empty() {
            return Err(Error::config("matrix needs at least one seed and one step size"));
        }
        let base = self.base_table(base_dir)?;
        let variants = if self.variants.is_empty() {
            vec![Variant {
                name: "default".into(),
                set: toml::Table::new(),
            }]
        } else {
            self.variants.clone()
        };
        let mut runs = Vec::new();
        for variant in &variants {
            for agg in &self.aggregators {
                let (agg_label, agg_table) = aggregator_entry(agg)?;
                for attack in &self.attacks {
                    let (attack_label, attack_table) = attack_entry(attack)?;
                    for &step in &self.step_sizes {
                        for &seed in &self.seeds {
                            let mut table = base.clone();
                            merge_tables(&mut table, &variant.set);
                            merge_into(&mut table, "aggregator", &agg_table);
                            merge_into(&mut table, "attack", &attack_table);
                            table.insert("gamma".into(), toml::Value::Float(step));
                            table.insert("seed".into(), toml::Value::Integer(seed as i64));
                            let config = RunConfig::from_table(table)?;
                            config.validate()?;
                            runs.push(MatrixRun {
                                variant: variant.name.clone(),
                                aggregator: agg_label.clone(),
                                attack: attack_label.clone(),
                                step_size: step,
                                seed,
                                config,
                            });
                        }
                    }
                }
            }
        }
        Ok(runs)
    }
}

fn merge_into(table: &mut toml::Table, key: &str, overlay: &toml::Table) {
    let mut wrapper = toml::Table::new();
    wrapper.insert(key.into(), toml::Value::Table(overlay.clone()));
    merge_tables(table, &wrapper);
}

fn aggregator_entry(value: &toml::Value) -> Result<(String, toml::Table)> {
    let mut table = toml::Table::new();
    match value {
        toml::Value::String(label) => {
            let (rule, nnm) = match label.strip_suffix("+nnm") {
                Some(rule) => (rule, true),
                None => (label.as_str(), false),
            };
            table.insert("rule".into(), toml::Value::String(rule.into()));
            table.insert("use_nnm".into(), toml::Value::Boolean(nnm));
            Ok((label.clone(), table))
        }
        toml::Value::Table(t) => {
            let rule = t
                .get("rule")
                .and_then(toml::Value::as_str)
                .ok_or_else(|| Error::config("matrix aggregator table needs a rule"))?;
            let nnm = t.get("use_nnm").and_then(toml::Value::as_bool).unwrap_or(false);
            let label = if nnm { format!("{rule}+nnm") } else { rule.to_string() };
            table.clone_from(t);
            table.entry("use_nnm").or_insert(toml::Value::Boolean(false));
            Ok((label, table))
        }
        other => Err(Error::config(format!("bad matrix aggregator entry {other}"))),
    }
}

fn attack_entry(value: &toml::Value) -> Result<(String, toml::Table)> {
    match value {
        toml::Value::String(kind) => {
            let mut table = toml::Table::new();
            table.insert("kind".into(), toml::Value::String(kind.clone()));
            Ok((kind.clone(), table))
        }
        toml::Value::Table(t) => {
            let kind = t
                .get("kind")
                .and_then(toml::Value::as_str)
                .ok_or_else(|| Error::config("matrix attack table needs a kind"))?;
            Ok((kind.to_string(), t.clone()))
        }
        other => Err(Error::config(format!("bad matrix attack entry {other}"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixRun {
    pub variant: String,
    pub aggregator: String,
    pub attack: String,
    pub step_size: f64,
    pub seed: u64,
    pub config: RunConfig,
}

impl MatrixRun {
    pub fn relative_dir(&self) -> PathBuf {
        PathBuf::from(&self.variant)
            .join(format!("{}__{}", self.aggregator, self.attack))
            .join(format!("gamma_{}", self.step_size))
            .join(format!("seed_{}", self.seed))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub variant: String,
    pub aggregator: String,
    pub attack: String,
    pub step_size: f64,
    pub seed: u64,
    pub csv: PathBuf,
    pub final_loss: f64,
    pub diverged: bool,
    /// Whether this run's step size was selected for its cell.
    pub selected: bool,
    /// False when the run was found complete on disk.
    pub executed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellBest {
    pub variant: String,
    pub aggregator: String,
    pub attack: String,
    pub step_size: f64,
    /// Mean final loss over seeds; infinite if any seed diverged.
    pub mean_final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixOutcome {
    pub runs: Vec<RunRecord>,
    pub best: Vec<CellBest>,
}

impl MatrixOutcome {
    pub fn best_for(&self, variant: &str, aggregator: &str, attack: &str) -> Option<&CellBest> {
        self.best
            .iter()
            .find(|b| b.variant == variant && b.aggregator == aggregator && b.attack == attack)
    }
}

#[derive(Debug, Clone, Default)]
pub struct MatrixOptions {
    /// Run cells on the rayon pool; outputs are identical either way.
    pub parallel: bool,
}

type DataCache = Mutex<HashMap<String, Arc<LoadedData>>>;

fn cached_dataset(cache: &DataCache, config: &RunConfig) -> Result<Arc<LoadedData>> {
    let expected = config.dataset.expected_sha256().map(str::to_string);
    let mut unpinned = config.dataset.clone();
    unpin(&mut unpinned);
    let key = toml::to_string(&unpinned).expect("dataset spec serialises");
    let data = {
        let mut guard = cache.lock().expect("dataset cache lock");
        match guard.get(&key) {
            Some(d) => Arc::clone(d),
            None => {
                let d = Arc::new(load_dataset(&unpinned)?);
                guard.insert(key, Arc::clone(&d));
                d
            }
        }
    };
    if let Some(expected) = expected {
        if !expected.eq_ignore_ascii_case(&data.sha256) {
            return Err(Error::config(format!(
                "dataset.sha256 mismatch: expected {expected}, found {}",
                data.sha256
            )));
        }
    }
    Ok(data)
}

fn unpin(spec: &mut DatasetSpec) {
    match spec {
        DatasetSpec::Libsvm { sha256, .. }
        | DatasetSpec::Synthetic { sha256, .. }
        | DatasetSpec::A9aLike { sha256, .. } => *sha256 = None,
    }
}

/// Final training loss and divergence status of a finished run on disk.
fn read_finished(dir: &Path, rounds: u64) -> Result<(f64, bool)> {
    let text = fs::read_to_string(dir.join(METRICS_FILE))?;
    let last = text
        .lines()
        .skip(1)
        .last()
        .ok_or_else(|| Error::State(format!("{} has no rows", dir.display())))?;
    let mut fields = last.split(',');
    let round: u64 = fields
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::State(format!("bad metrics row in {}", dir.display())))?;
    let loss: f64 = fields
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::State(format!("bad metrics row in {}", dir.display())))?;
    Ok((loss, round != rounds))
}

fn execute(run: &MatrixRun, out_dir: &Path, cache: &DataCache) -> Result<RunRecord> {
    let rel = run.relative_dir();
    let dir = out_dir.join(&rel);
    let rounds = run.config.rounds;
    let executed = !dir.join(MANIFEST_FILE).exists();
    let (final_loss, diverged) = if executed {
        let data = cached_dataset(cache, &run.config)?;
        let output = run_with_data(run.config.clone(), &data, RunOptions::default())?;
        write_run_outputs(&dir, &output)?;
        (output.final_loss().unwrap_or(f64::NAN), output.diverged)
    } else {
        read_finished(&dir, rounds)?
    };
    Ok(RunRecord {
        variant: run.variant.clone(),
        aggregator: run.aggregator.clone(),
        attack: run.attack.clone(),
        step_size: run.step_size,
        seed: run.seed,
        csv: rel.join(METRICS_FILE),
        final_loss,
        diverged,
        selected: false,
        executed,
    })
}

/// Picks, per cell, the step size with the lowest mean final loss.
fn select_best(records: &mut [RunRecord]) -> Vec<CellBest> {
    let mut groups: Vec<(String, String, String)> = Vec::new();
    for r in records.iter() {
        let key = (r.variant.clone(), r.aggregator.clone(), r.attack.clone());
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    let mut best = Vec::new();
    for (variant, aggregator, attack) in groups {
        let in_cell = |r: &RunRecord| r.variant == variant && r.aggregator == aggregator && r.attack == attack;
        let mut steps: Vec<f64> = Vec::new();
        for r in records.iter().filter(|r| in_cell(r)) {
            if !steps.contains(&r.step_size) {
                steps.push(r.step_size);
            }
        }
        let mut choice: Option<(f64, f64)> = None;
        for step in steps {
            let losses: Vec<f64> = records
                .iter()
                .filter(|r| in_cell(r) && r.step_size == step)
                .map(|r| if r.diverged || !r.final_loss.is_finite() { f64::INFINITY } else { r.final_loss })
                .collect();
            let mean = losses.iter().sum::<f64>() / losses.len() as f64;
            if choice.is_none_or(|(_, m)| mean < m) {
                choice = Some((step, mean));
            }
        }
        let (step_size, mean_final_loss) = choice.expect("cell has runs");
        for r in records.iter_mut().filter(|r| in_cell(r)) {
            r.selected = r.step_size == step_size;
        }
        best.push(CellBest {
            variant,
            aggregator,
            attack,
            step_size,
            mean_final_loss,
        });
    }
    best
}

/// Runs (or resumes) the matrix and writes the index files.
pub fn run_matrix(spec: &MatrixSpec, base_dir: &Path, out_dir: &Path, options: &MatrixOptions) -> Result<MatrixOutcome> {
    let runs = spec.expand(base_dir)?;
    fs::create_dir_all(out_dir)?;
    let cache: DataCache = Mutex::new(HashMap::new());
    let results: Vec<Result<RunRecord>> = if options.parallel {
        runs.par_iter().map(|r| execute(r, out_dir, &cache)).collect()
    } else {
        runs.iter().map(|r| execute(r, out_dir, &cache)).collect()
    };
    let mut records = results.into_iter().collect::<Result<Vec<_>>>()?;
    let best = select_best(&mut records);
    fs::write(out_dir.join(INDEX_FILE), index_csv(&records))?;
    fs::write(out_dir.join(BEST_FILE), best_csv(&best))?;
    Ok(MatrixOutcome { runs: records, best })
}

pub fn index_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(INDEX_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:?},{},{}\n",
            r.variant,
            r.aggregator,
            r.attack,
            r.step_size,
            r.seed,
            r.csv.display(),
            r.final_loss,
            u8::from(r.diverged),
            u8::from(r.selected)
        ));
    }
    out
}

pub fn best_csv(best: &[CellBest]) -> String {
    let mut out = String::from(BEST_HEADER);
    out.push('\n');
    for b in best {
        out.push_str(&format!(
            "{},{},{},{},{:?}\n",
            b.variant, b.aggregator, b.attack, b.step_size, b.mean_final_loss
        ));
    }
    out
}

/// Convenience for callers holding a config rather than a matrix file.
pub fn single_cell(config: &RunConfig) -> Result<MatrixSpec> {
    let mut base = toml::Table::try_from(config).map_err(|e| Error::Config(e.to_string()))?;
    base.remove("gamma");
    base.remove("seed");
    let step = match config.gamma {
        AutoOr::Value(g) => g,
        AutoOr::Auto => return Err(Error::config("a single-cell matrix needs a numeric gamma")),
    };
    let agg = toml::Value::try_from(config.aggregator).map_err(|e| Error::Config(e.to_string()))?;
    let attack = toml::Value::try_from(config.attack).map_err(|e| Error::Config(e.to_string()))?;
    Ok(MatrixSpec {
        base: BaseConfig::Inline(base),
        aggregators: vec![agg],
        attacks: vec![attack],
        seeds: vec![config.seed],
        step_sizes: vec![step],
        variants: Vec::new(),
    })
}
