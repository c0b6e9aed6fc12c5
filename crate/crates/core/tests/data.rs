use byzsim_core::data::{
    logistic_grad, logistic_loss, parse_libsvm, partition_label_skew, partition_uniform, synthetic_examples,
    write_libsvm, Example, SyntheticSpec,
};
use proptest::prelude::*;

fn examples(seed: u64, count: usize, dim: usize) -> Vec<Example> {
    synthetic_examples(&SyntheticSpec {
        examples: count,
        dim,
        separation: 1.0,
        seed,
        lambda: 0.0,
    })
    .unwrap()
}

proptest! {
    #[test]
    fn gradient_matches_central_differences(
        seed in 0u64..50,
        x in prop::collection::vec(-3.0f64..3.0, 6),
        lambda in 0.0f64..1.0,
    ) {
        let data = examples(seed, 12, 6);
        let g = logistic_grad(&x, &data, lambda).unwrap();
        let h = 1e-5;
        for j in 0..6 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fd = (logistic_loss(&xp, &data, lambda).unwrap() - logistic_loss(&xm, &data, lambda).unwrap()) / (2.0 * h);
            prop_assert!((fd - g[j]).abs() <= 1e-6 * (1.0 + g[j].abs()), "coordinate {j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn loss_is_convex_along_segments(
        seed in 0u64..50,
        x in prop::collection::vec(-3.0f64..3.0, 5),
        y in prop::collection::vec(-3.0f64..3.0, 5),
        t in 0.0f64..1.0,
    ) {
        let data = examples(seed, 10, 5);
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        let lhs = logistic_loss(&mid, &data, 0.1).unwrap();
        let rhs = t * logistic_loss(&x, &data, 0.1).unwrap() + (1.0 - t) * logistic_loss(&y, &data, 0.1).unwrap();
        prop_assert!(lhs <= rhs + 1e-12);
    }

    #[test]
    fn uniform_partition_is_deterministic_and_exhaustive(seed in any::<u64>(), n in 1usize..12) {
        let data = examples(1, 50, 3);
        let a = partition_uniform(&data, n, seed).unwrap();
        let b = partition_uniform(&data, n, seed).unwrap();
        prop_assert_eq!(&a, &b);
        let sizes: Vec<usize> = a.iter().map(|s| s.len()).collect();
        prop_assert_eq!(sizes.iter().sum::<usize>(), 50);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut seen: Vec<&Example> = a.iter().flat_map(|s| &s.examples).collect();
        seen.sort_by(|p, q| format!("{p:?}").cmp(&format!("{q:?}")));
        let mut all: Vec<&Example> = data.iter().collect();
        all.sort_by(|p, q| format!("{p:?}").cmp(&format!("{q:?}")));
        prop_assert_eq!(seen, all);
    }

    #[test]
    fn label_skew_partition_is_deterministic(seed in any::<u64>(), n in 1usize..8) {
        let data = examples(2, 40, 3);
        let a = partition_label_skew(&data, n, seed).unwrap();
        prop_assert_eq!(&a, &partition_label_skew(&data, n, seed).unwrap());
        prop_assert_eq!(a.iter().map(|s| s.len()).sum::<usize>(), 40);
    }
}

#[test]
fn libsvm_round_trip() {
    let data = examples(3, 20, 7);
    let mut buf = Vec::new();
    write_libsvm(&mut buf, &data).unwrap();
    let back = parse_libsvm(buf.as_slice(), 7).unwrap();
    assert_eq!(back, data);
}

#[test]
fn libsvm_errors_name_the_line() {
    let text = "+1 1:0.5 3:1\n-1 2:x\n";
    let err = parse_libsvm(text.as_bytes(), 4).unwrap_err().to_string();
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn loss_at_origin_is_log_two() {
    let data = examples(4, 30, 4);
    let l = logistic_loss(&[0.0; 4], &data, 0.3).unwrap();
    assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
}
