//! Training data: LIBSVM ingestion, worker shards, logistic-regression
//! oracles and synthetic problems.

mod libsvm;
mod loss;
mod synthetic;

use rand::seq::SliceRandom;
use rand::Rng;

pub use libsvm::{dataset_hash, normalize_rows, parse_libsvm, read_libsvm_file, write_libsvm};
pub use loss::{
    logistic_grad, logistic_grad_into, logistic_loss, sigmoid, smoothness_bound, softplus,
    LabelMode,
};
pub use synthetic::{
    a9a_like, make_synthetic, synthetic_examples, write_vector, SyntheticProblem, SyntheticSpec,
    A9A_DIM, A9A_EXAMPLES,
};

use crate::compressors::SparseDelta;
use crate::rng::{tag, tagged_rng};
use crate::{Error, Result};

/// One labelled data point `(a, b)` with a sparse feature row.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: SparseDelta,
    /// `-1` or `+1`.
    pub label: i8,
}

impl Example {
    pub fn new(features: SparseDelta, label: i8) -> Result<Self> {
        if label != 1 && label != -1 {
            return Err(Error::argument(format!("label must be -1 or +1, got {label}")));
        }
        Ok(Self { features, label })
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    /// `<a, x>`
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.features
            .entries()
            .iter()
            .map(|&(i, v)| v * x[i as usize])
            .sum()
    }
}

/// Local dataset of one worker.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub owner: usize,
    pub examples: Vec<Example>,
}

impl Shard {
    pub fn new(owner: usize, examples: Vec<Example>) -> Self {
        Self { owner, examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Loss model; only l2-regularised logistic regression is supported.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub lambda: f64,
    pub dim: usize,
}

/// Shuffles `dataset` with `seed` and splits it into `n` contiguous shards
/// whose sizes differ by at most one; earlier shards take the remainder.
pub fn partition_uniform(dataset: &[Example], n: usize, seed: u64) -> Result<Vec<Shard>> {
    if n == 0 {
        return Err(Error::config("cannot partition across zero workers"));
    }
    if n > dataset.len() {
        return Err(Error::config(format!(
            "cannot split {} examples across {n} workers",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut tagged_rng(tag::PARTITION, seed));
    Ok(split_contiguous(dataset, &order, n))
}

/// Label-skewed split: examples sorted by label (ties in shuffled order),
/// then cut into contiguous shards. Produces heterogeneous workers.
pub fn partition_label_skew(dataset: &[Example], n: usize, seed: u64) -> Result<Vec<Shard>> {
    if n == 0 || n > dataset.len() {
        return Err(Error::config(format!(
            "cannot split {} examples across {n} workers",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut tagged_rng(tag::PARTITION, seed));
    order.sort_by_key(|&i| dataset[i].label);
    Ok(split_contiguous(dataset, &order, n))
}

fn split_contiguous(dataset: &[Example], order: &[usize], n: usize) -> Vec<Shard> {
    let base = order.len() / n;
    let extra = order.len() % n;
    let mut start = 0;
    (0..n)
        .map(|owner| {
            let size = base + usize::from(owner < extra);
            let examples = order[start..start + size]
                .iter()
                .map(|&i| dataset[i].clone())
                .collect();
            start += size;
            Shard::new(owner, examples)
        })
        .collect()
}

/// `batch_size` i.i.d. uniform draws, with replacement, from `shard`.
pub fn sample_batch<'a, R: Rng + ?Sized>(
    shard: &'a Shard,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<&'a Example>> {
    if batch_size == 0 {
        return Err(Error::argument("batch size must be at least 1"));
    }
    if shard.is_empty() {
        return Err(Error::State(format!("worker {} has an empty shard", shard.owner)));
    }
    Ok((0..batch_size)
        .map(|_| &shard.examples[rng.random_range(0..shard.len())])
        .collect())
}
