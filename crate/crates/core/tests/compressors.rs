use byzsim_core::compressors::{compress_randk, compress_topk, decompress_add, uplink_bits, CompressorSpec};
use byzsim_core::rng::tagged_rng;
use byzsim_core::SparseDelta;
use proptest::prelude::*;

fn vector() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3f64..1e3, 1..40)
}

proptest! {
    #[test]
    fn topk_contracts(z in vector(), k_seed in 0usize..1000) {
        let d = z.len();
        let k = 1 + k_seed % d;
        let c = compress_topk(&z, k).unwrap().to_dense();
        let err: f64 = c.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
        let norm: f64 = z.iter().map(|v| v * v).sum();
        prop_assert!(err <= (1.0 - k as f64 / d as f64) * norm * (1.0 + 1e-12));
    }

    #[test]
    fn topk_keeps_largest_magnitudes(z in vector(), k_seed in 0usize..1000) {
        let k = 1 + k_seed % z.len();
        let delta = compress_topk(&z, k).unwrap();
        prop_assert_eq!(delta.len(), k);
        let kept_min = delta.entries().iter().map(|(_, v)| v.abs()).fold(f64::INFINITY, f64::min);
        let kept: Vec<u32> = delta.entries().iter().map(|(i, _)| *i).collect();
        for (i, v) in z.iter().enumerate() {
            if !kept.contains(&(i as u32)) {
                prop_assert!(v.abs() <= kept_min);
            }
        }
        for &(i, v) in delta.entries() {
            prop_assert_eq!(v, z[i as usize]);
        }
    }

    #[test]
    fn randk_support_and_scaling(z in vector(), k_seed in 0usize..1000, seed in any::<u64>()) {
        let d = z.len();
        let k = 1 + k_seed % d;
        let mut rng = tagged_rng(77, seed);
        let delta = compress_randk(&z, k, &mut rng).unwrap();
        // Zero coordinates are not transmitted.
        prop_assert!(delta.len() <= k);
        let mut idx: Vec<u32> = delta.entries().iter().map(|(i, _)| *i).collect();
        idx.dedup();
        prop_assert_eq!(idx.len(), delta.len());
        for &(i, v) in delta.entries() {
            prop_assert_eq!(v, z[i as usize] * (d as f64 / k as f64));
        }
    }

    #[test]
    fn wire_round_trip(z in vector(), k_seed in 0usize..1000) {
        let k = 1 + k_seed % z.len();
        let delta = compress_topk(&z, k).unwrap();
        let back = SparseDelta::from_bytes(&delta.to_bytes()).unwrap();
        prop_assert_eq!(&back, &delta);
        let base = vec![0.5; z.len()];
        let sum = decompress_add(&base, &delta).unwrap();
        let dense = delta.to_dense();
        for j in 0..z.len() {
            prop_assert_eq!(sum[j], base[j] + dense[j]);
        }
    }

    #[test]
    fn identity_is_exact(z in vector()) {
        let mut rng = tagged_rng(1, 1);
        let out = CompressorSpec::identity().apply(&z, &mut rng).unwrap().to_dense();
        prop_assert_eq!(out, z);
    }
}

#[test]
fn bit_accounting_example() {
    // 10 entries in dimension 1000: 10 * (32 + 10) bits.
    let entries: Vec<(u32, f64)> = (0..10).map(|i| (i * 7, 1.0)).collect();
    let delta = SparseDelta::from_entries(1000, entries).unwrap();
    assert_eq!(uplink_bits(&delta, 32, 1000), 420);
}

#[test]
fn truncated_wire_form_is_rejected() {
    let delta = compress_topk(&[1.0, -2.0, 3.0], 2).unwrap();
    let bytes = delta.to_bytes();
    assert!(SparseDelta::from_bytes(&bytes[..bytes.len() - 1]).is_err());
}
