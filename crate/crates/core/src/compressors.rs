//! Sparsifying compressors and the sparse message type that crosses the
//! worker-to-server boundary.

use std::cmp::Ordering;
use std::io::{self, Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default transmission width of one value, in bits.
pub const DEFAULT_VALUE_BITS: u32 = 32;

/// Index-value list over a `dim`-dimensional space.
///
/// Indices are strictly increasing and no stored value is zero, so every
/// sparse vector has exactly one representation.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDelta {
    dim: usize,
    entries: Vec<(u32, f64)>,
}

impl SparseDelta {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    /// Builds a delta from entries sorted by index. Zero values are dropped.
    pub fn from_entries(dim: usize, entries: Vec<(u32, f64)>) -> Result<Self> {
        let mut prev: Option<u32> = None;
        for &(idx, _) in &entries {
            if idx as usize >= dim {
                return Err(Error::argument(format!(
                    "index {idx} out of range for dimension {dim}"
                )));
            }
            if prev.is_some_and(|p| p >= idx) {
                return Err(Error::argument("sparse indices must be strictly increasing"));
            }
            prev = Some(idx);
        }
        let entries = entries.into_iter().filter(|&(_, v)| v != 0.0).collect();
        Ok(Self { dim, entries })
    }

    /// Sparse view of a dense vector, keeping its nonzero coordinates.
    pub fn from_dense(z: &[f64]) -> Self {
        let entries = z
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, &v)| (i as u32, v))
            .collect();
        Self {
            dim: z.len(),
            entries,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.add_into(&mut out);
        out
    }

    /// `base[idx] += value` for every entry. Panics on dimension mismatch;
    /// see [`decompress_add`] for the checked form.
    pub fn add_into(&self, base: &mut [f64]) {
        assert_eq!(base.len(), self.dim, "dimension mismatch");
        for &(idx, v) in &self.entries {
            base[idx as usize] += v;
        }
    }

    /// Every value negated, indices unchanged.
    pub fn negated(&self) -> Self {
        Self {
            dim: self.dim,
            entries: self.entries.iter().map(|&(i, v)| (i, -v)).collect(),
        }
    }

    /// Squared Euclidean norm of the represented vector.
    pub fn norm_sq(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum()
    }

    /// Little-endian wire form: `u32 dim, u32 count, count x (u32 index, f64 value)`.
    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for &(idx, v) in &self.entries {
            w.write_all(&idx.to_le_bytes())?;
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let dim = read_u32(r)? as usize;
        let count = read_u32(r)? as usize;
        if count > dim {
            return Err(Error::argument(format!(
                "sparse record claims {count} entries in dimension {dim}"
            )));
        }
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let idx = read_u32(r)?;
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)?;
            entries.push((idx, f64::from_le_bytes(buf)));
        }
        Self::from_entries(dim, entries)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 12 * self.entries.len());
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut bytes)
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompressorKind {
    TopK,
    RandK,
    Identity,
}

/// Compression operator together with its declared contraction parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressorSpec {
    pub kind: CompressorKind,
    /// Number of coordinates kept; ignored by `Identity`.
    #[serde(default = "default_k")]
    pub k: usize,
    /// Declared alpha; `None` means `k / d` (1 for `Identity`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

fn default_k() -> usize {
    1
}

impl CompressorSpec {
    pub fn top_k(k: usize) -> Self {
        Self {
            kind: CompressorKind::TopK,
            k,
            alpha: None,
        }
    }

    pub fn rand_k(k: usize) -> Self {
        Self {
            kind: CompressorKind::RandK,
            k,
            alpha: None,
        }
    }

    pub fn identity() -> Self {
        Self {
            kind: CompressorKind::Identity,
            k: 1,
            alpha: None,
        }
    }

    /// Unbiased compressors satisfy `E[C(z)] = z`.
    pub fn is_unbiased(&self) -> bool {
        matches!(self.kind, CompressorKind::RandK | CompressorKind::Identity)
    }

    /// Contraction parameter for dimension `dim`.
    pub fn alpha(&self, dim: usize) -> f64 {
        match (self.alpha, self.kind) {
            (Some(a), _) => a,
            (None, CompressorKind::Identity) => 1.0,
            (None, _) => self.k as f64 / dim as f64,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::config(format!("compressor.alpha = {a} is not in (0, 1]")));
            }
        }
        if self.kind != CompressorKind::Identity && !(1..=dim).contains(&self.k) {
            return Err(Error::config(format!(
                "compressor.k = {} is not in [1, {dim}]",
                self.k
            )));
        }
        Ok(())
    }

    /// Compresses `z`, drawing any randomness from `rng`.
    pub fn apply<R: Rng + ?Sized>(&self, z: &[f64], rng: &mut R) -> Result<SparseDelta> {
        match self.kind {
            CompressorKind::TopK => compress_topk(z, self.k),
            CompressorKind::RandK => compress_randk(z, self.k, rng),
            CompressorKind::Identity => Ok(SparseDelta::from_dense(z)),
        }
    }
}

fn check_k(k: usize, dim: usize) -> Result<()> {
    if k == 0 || k > dim {
        return Err(Error::argument(format!("k = {k} is not in [1, {dim}]")));
    }
    Ok(())
}

/// Keeps the `k` largest-magnitude coordinates of `z`; ties go to the lower
/// index.
pub fn compress_topk(z: &[f64], k: usize) -> Result<SparseDelta> {
    check_k(k, z.len())?;
    // Larger magnitude first, then lower index.
    let rank = |a: &usize, b: &usize| -> Ordering {
        z[*b].abs().total_cmp(&z[*a].abs()).then(a.cmp(b))
    };
    let mut chosen: Vec<usize> = if k == 1 {
        let best = (0..z.len()).min_by(rank).expect("k <= dim implies dim >= 1");
        vec![best]
    } else {
        let mut idx: Vec<usize> = (0..z.len()).collect();
        if k < idx.len() {
            idx.select_nth_unstable_by(k - 1, rank);
            idx.truncate(k);
        }
        idx
    };
    chosen.sort_unstable();
    let entries = chosen
        .into_iter()
        .filter(|&i| z[i] != 0.0)
        .map(|i| (i as u32, z[i]))
        .collect();
    Ok(SparseDelta {
        dim: z.len(),
        entries,
    })
}

/// Keeps `k` coordinates chosen uniformly without replacement and scales
/// them by `d / k`, which makes the operator unbiased.
pub fn compress_randk<R: Rng + ?Sized>(z: &[f64], k: usize, rng: &mut R) -> Result<SparseDelta> {
    let d = z.len();
    check_k(k, d)?;
    // Partial Fisher-Yates: the first k slots end up holding a uniform k-subset.
    let mut idx: Vec<u32> = (0..d as u32).collect();
    for i in 0..k {
        let j = rng.random_range(i..d);
        idx.swap(i, j);
    }
    let mut chosen = idx[..k].to_vec();
    chosen.sort_unstable();
    let scale = d as f64 / k as f64;
    let entries = chosen
        .into_iter()
        .map(|i| (i, z[i as usize] * scale))
        .filter(|&(_, v)| v != 0.0)
        .collect();
    Ok(SparseDelta { dim: d, entries })
}

/// Returns `base` with `delta` added.
pub fn decompress_add(base: &[f64], delta: &SparseDelta) -> Result<Vec<f64>> {
    if base.len() != delta.dim() {
        return Err(Error::argument(format!(
            "base has dimension {} but delta has dimension {}",
            base.len(),
            delta.dim()
        )));
    }
    let mut out = base.to_vec();
    delta.add_into(&mut out);
    Ok(out)
}

/// Bits needed to address one coordinate of a `dim`-dimensional vector.
pub fn index_bits(dim: usize) -> u32 {
    if dim <= 1 {
        0
    } else {
        usize::BITS - (dim - 1).leading_zeros()
    }
}

/// Uplink cost of one message: every entry carries a value and an index.
pub fn uplink_bits(delta: &SparseDelta, value_bits: u32, dim: usize) -> u64 {
    delta.len() as u64 * (value_bits as u64 + index_bits(dim) as u64)
}
