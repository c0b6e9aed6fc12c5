//! LIBSVM text format: `label idx:val idx:val ...` with 1-based indices.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::compressors::SparseDelta;
use crate::{Error, Result};

use super::Example;

fn parse_label(token: &str, line: usize) -> Result<i8> {
    let value: f64 = token.parse().map_err(|_| Error::Parse {
        line,
        message: format!("label {token:?} is not a number"),
    })?;
    if value == 1.0 {
        Ok(1)
    } else if value == -1.0 || value == 0.0 {
        Ok(-1)
    } else {
        Err(Error::Parse {
            line,
            message: format!("label {token:?} is not binary (expected -1, 0 or +1)"),
        })
    }
}

fn parse_line(text: &str, line: usize, dim: usize) -> Result<Example> {
    let mut tokens = text.split_whitespace();
    let label = parse_label(tokens.next().expect("caller skips blank lines"), line)?;
    let mut entries = Vec::new();
    let mut prev = 0usize;
    for token in tokens {
        let (idx, val) = token.split_once(':').ok_or_else(|| Error::Parse {
            line,
            message: format!("feature {token:?} is not of the form index:value"),
        })?;
        let idx: usize = idx.parse().map_err(|_| Error::Parse {
            line,
            message: format!("feature index {idx:?} is not a positive integer"),
        })?;
        let val: f64 = val.parse().map_err(|_| Error::Parse {
            line,
            message: format!("feature value {val:?} is not a number"),
        })?;
        if idx == 0 {
            return Err(Error::Parse {
                line,
                message: "feature indices are 1-based".into(),
            });
        }
        if idx <= prev {
            return Err(Error::Parse {
                line,
                message: format!("feature index {idx} does not increase"),
            });
        }
        if idx > dim {
            return Err(Error::Parse {
                line,
                message: format!("feature index {idx} exceeds dimension {dim}"),
            });
        }
        prev = idx;
        entries.push(((idx - 1) as u32, val));
    }
    let features = SparseDelta::from_entries(dim, entries)
        .map_err(|e| Error::Parse { line, message: e.to_string() })?;
    Ok(Example { features, label })
}

/// Parses LIBSVM text into examples of dimension `dim`. Labels `0` and `-1`
/// both map to `-1`.
pub fn parse_libsvm<R: BufRead>(reader: R, dim: usize) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (i, text) in reader.lines().enumerate() {
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&text, i + 1, dim)?);
    }
    Ok(out)
}

pub fn read_libsvm_file(path: &Path, dim: usize) -> Result<Vec<Example>> {
    let file = File::open(path)?;
    parse_libsvm(BufReader::new(file), dim)
}

pub fn write_libsvm<W: Write>(w: &mut W, examples: &[Example]) -> Result<()> {
    for e in examples {
        write!(w, "{}", if e.label > 0 { "+1" } else { "-1" })?;
        for &(i, v) in e.features.entries() {
            write!(w, " {}:{}", i + 1, v)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Scales every feature row to unit Euclidean norm (zero rows untouched).
pub fn normalize_rows(examples: &mut [Example]) {
    for e in examples {
        let norm = e.features.norm_sq().sqrt();
        if norm > 0.0 {
            let entries = e.features.entries().iter().map(|&(i, v)| (i, v / norm)).collect();
            e.features = SparseDelta::from_entries(e.features.dim(), entries)
                .expect("rescaling keeps indices valid");
        }
    }
}

/// SHA-256 over a canonical binary encoding of the examples, hex encoded.
pub fn dataset_hash(examples: &[Example]) -> String {
    let mut h = Sha256::new();
    for e in examples {
        h.update([e.label as u8]);
        h.update(e.features.to_bytes());
    }
    hex::encode(h.finalize())
}
