//! Materialising the configured dataset.

use crate::data::{a9a_like, dataset_hash, normalize_rows, read_libsvm_file, synthetic_examples, Example, SyntheticSpec};
use crate::{Error, Result};

use super::config::DatasetSpec;

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub examples: Vec<Example>,
    pub dim: usize,
    /// Hex SHA-256 of the examples in their canonical byte form.
    pub sha256: String,
}

/// Loads or generates the dataset and checks its hash when one is pinned.
pub fn load_dataset(spec: &DatasetSpec) -> Result<LoadedData> {
    let examples = match spec {
        DatasetSpec::Libsvm { path, dim, normalize, .. } => {
            let mut ex = read_libsvm_file(path, *dim)?;
            if *normalize {
                normalize_rows(&mut ex);
            }
            ex
        }
        DatasetSpec::Synthetic { examples, dim, separation, seed, .. } => {
            synthetic_examples(&SyntheticSpec {
                examples: *examples,
                dim: *dim,
                separation: *separation,
                seed: *seed,
                lambda: 0.0,
            })
            .map_err(|e| Error::Config(e.to_string()))?
        }
        DatasetSpec::A9aLike { seed, .. } => a9a_like(*seed),
    };
    if examples.is_empty() {
        return Err(Error::config("dataset has no examples"));
    }
    let sha256 = dataset_hash(&examples);
    if let Some(expected) = spec.expected_sha256() {
        if !expected.eq_ignore_ascii_case(&sha256) {
            return Err(Error::config(format!(
                "dataset.sha256 mismatch: expected {expected}, found {sha256}"
            )));
        }
    }
    Ok(LoadedData {
        examples,
        dim: spec.dim(),
        sha256,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_hash_is_pinned() {
        let mut spec = DatasetSpec::Synthetic {
            examples: 20,
            dim: 3,
            separation: 1.0,
            seed: 4,
            sha256: None,
        };
        let data = load_dataset(&spec).unwrap();
        assert_eq!(data.examples.len(), 20);
        spec.set_sha256(data.sha256.clone());
        assert!(load_dataset(&spec).is_ok());
        spec.set_sha256("00".repeat(32));
        assert!(matches!(load_dataset(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        let spec = DatasetSpec::Libsvm {
            path: "/nonexistent/data.libsvm".into(),
            dim: 3,
            normalize: false,
            sha256: None,
        };
        assert!(matches!(load_dataset(&spec), Err(Error::Io(_))));
    }
}
