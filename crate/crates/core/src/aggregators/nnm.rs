use crate::linalg::{canonical_mean, dist_sq};
use crate::{DenseVector, Error, Result};

use super::check_inputs;

/// Nearest-neighbour mixing.
///
/// Replaces every input with the unweighted mean of its `n - f` nearest
/// inputs (itself included). Equal distances are resolved by lower index.
pub fn nnm_preaggregate(inputs: &[DenseVector], f: usize) -> Result<Vec<DenseVector>> {
    let dim = check_inputs(inputs)?;
    let n = inputs.len();
    if f >= n {
        return Err(Error::config(format!("nnm needs n > f, got n = {n}, f = {f}")));
    }
    let keep = n - f;

    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = dist_sq(&inputs[i], &inputs[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut neighbours: Vec<&[f64]> = Vec::with_capacity(keep);
    let out = (0..n)
        .map(|i| {
            let row = &dist[i * n..(i + 1) * n];
            order.sort_unstable_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
            neighbours.clear();
            neighbours.extend(order[..keep].iter().map(|&j| inputs[j].as_slice()));
            canonical_mean(&neighbours, dim)
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_example() {
        let out = nnm_preaggregate(&[vec![0.0], vec![1.0], vec![10.0]], 1).unwrap();
        assert_eq!(out, vec![vec![0.5], vec![0.5], vec![5.5]]);
    }

    #[test]
    fn f_zero_gives_global_mean() {
        let inputs = vec![vec![1.0, 0.0], vec![3.0, 2.0], vec![2.0, 7.0]];
        let out = nnm_preaggregate(&inputs, 0).unwrap();
        assert_eq!(out.len(), 3);
        for o in &out {
            assert!((o[0] - 2.0).abs() < 1e-15 && (o[1] - 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_inputs_unchanged() {
        let inputs = vec![vec![0.3, -1.1]; 5];
        assert_eq!(nnm_preaggregate(&inputs, 2).unwrap(), inputs);
    }

    #[test]
    fn ties_go_to_lower_index() {
        // Input 1 is equidistant from 0 and 2; with n - f = 2 it mixes with 0.
        let out = nnm_preaggregate(&[vec![0.0], vec![1.0], vec![2.0]], 1).unwrap();
        assert_eq!(out[1], vec![0.5]);
    }

    #[test]
    fn requires_n_above_f() {
        assert!(nnm_preaggregate(&[vec![0.0]], 1).is_err());
    }
}
