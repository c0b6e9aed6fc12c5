use byzsim_core::aggregators::{aggregate, certify_kappa, evaluate_set, AggregatorSpec, Kappa, Rule};
use byzsim_core::rng::tagged_rng;
use proptest::prelude::*;

const RULES: [Rule; 4] = [Rule::Avg, Rule::CwMed, Rule::Cwtm, Rule::Rfa];

fn input_set() -> impl Strategy<Value = (Vec<Vec<f64>>, usize)> {
    (3usize..9, 1usize..5).prop_flat_map(|(n, d)| {
        let f_max = (n - 1) / 2;
        (
            prop::collection::vec(prop::collection::vec(-100.0f64..100.0, d), n),
            0..=f_max,
        )
    })
}

fn specs(f: usize) -> Vec<AggregatorSpec> {
    RULES
        .iter()
        .flat_map(|&r| [AggregatorSpec::new(r, f), AggregatorSpec::new(r, f).with_nnm(true)])
        .collect()
}

proptest! {
    #[test]
    fn permutation_invariant((inputs, f) in input_set(), rot in 0usize..100) {
        let mut permuted = inputs.clone();
        permuted.rotate_left(rot % inputs.len());
        permuted.swap(0, inputs.len() - 1);
        for spec in specs(f) {
            prop_assert_eq!(aggregate(&spec, &inputs).unwrap(), aggregate(&spec, &permuted).unwrap(), "{}", spec.label());
        }
    }

    #[test]
    fn translation_equivariant((inputs, f) in input_set(), shift in -50.0f64..50.0) {
        let moved: Vec<Vec<f64>> = inputs.iter().map(|v| v.iter().map(|x| x + shift).collect()).collect();
        for spec in specs(f) {
            let a = aggregate(&spec, &inputs).unwrap();
            let b = aggregate(&spec, &moved).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x + shift - y).abs() <= 1e-6 * (1.0 + y.abs()), "{}", spec.label());
            }
        }
    }

    #[test]
    fn output_inside_bounding_box((inputs, f) in input_set()) {
        for spec in specs(f) {
            let out = aggregate(&spec, &inputs).unwrap();
            for (j, o) in out.iter().enumerate() {
                let lo = inputs.iter().map(|v| v[j]).fold(f64::INFINITY, f64::min);
                let hi = inputs.iter().map(|v| v[j]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(*o >= lo && *o <= hi, "{} coordinate {j}", spec.label());
            }
        }
    }

    #[test]
    fn identical_inputs_are_fixed_points(v in prop::collection::vec(-1e6f64..1e6, 1..6), n in 3usize..9) {
        let inputs = vec![v.clone(); n];
        for spec in specs((n - 1) / 2) {
            prop_assert_eq!(aggregate(&spec, &inputs).unwrap(), v.clone(), "{}", spec.label());
        }
    }
}

#[test]
fn cwmed_certificate_is_finite() {
    let spec = AggregatorSpec::new(Rule::CwMed, 2);
    let cert = certify_kappa(&spec, 5, 2, 2, 1000, &mut tagged_rng(5, 0)).unwrap();
    assert!(cert.kappa_hat.is_finite());
    assert!(cert.kappa_hat.value() > 0.0);
    assert_eq!(cert.subsets_checked, 1000 * 10);
}

#[test]
fn averaging_certificates() {
    let avg = AggregatorSpec::new(Rule::Avg, 1);
    let cert = certify_kappa(&avg, 3, 1, 1, 20, &mut tagged_rng(5, 1)).unwrap();
    assert_eq!(cert.kappa_hat, Kappa::Unbounded);
    assert!(cert.csv_row().contains(",inf,"));
    let exact = certify_kappa(&AggregatorSpec::new(Rule::Avg, 0), 4, 0, 2, 20, &mut tagged_rng(5, 2)).unwrap();
    assert_eq!(exact.kappa_hat, Kappa::Finite(0.0));
}

#[test]
fn certificate_bounds_every_replayed_subset() {
    let spec = AggregatorSpec::new(Rule::Cwtm, 1).with_nnm(true);
    let cert = certify_kappa(&spec, 5, 1, 3, 200, &mut tagged_rng(8, 8)).unwrap();
    let mut rng = tagged_rng(8, 8);
    for _ in 0..200 {
        let inputs = byzsim_core::aggregators::sample_trial(&mut rng, 5, 1, 3);
        let report = evaluate_set(&spec, &inputs, 1).unwrap();
        assert!(report.worst_ratio <= cert.kappa_hat.value());
    }
}

#[test]
fn rfa_with_nnm_survives_collapsed_clusters() {
    // Integer lattice sets with a collapsed honest majority.
    let spec = AggregatorSpec::new(Rule::Rfa, 2).with_nnm(true);
    for m in [1.0, 7.0, 1e4] {
        let mut inputs = vec![vec![2.0, -3.0]; 8];
        inputs.push(vec![2.0 + m, -3.0]);
        inputs.push(vec![2.0, -3.0 - m]);
        let report = evaluate_set(&spec, &inputs, 2).unwrap();
        assert!(!report.unbounded, "m = {m}");
    }
}
