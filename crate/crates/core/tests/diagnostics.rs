use byzsim_core::aggregators::{aggregate, AggregatorSpec, Rule};
use byzsim_core::data::{make_synthetic, Shard, SyntheticSpec};
use byzsim_core::engine::diagnostics::{lemma2_terms, lyapunov_value, LocalLoss, LyapunovParams};
use byzsim_core::engine::theory::{delta_constant, gamma_max};
use proptest::prelude::*;

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn vecs(count: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, d), count)
}

proptest! {
    // CWMed with n = 3, f = 1: the bound holds with kappa taken as the
    // robustness ratio realised on the honest pair itself.
    #[test]
    fn aggregation_error_bound_monte_carlo(
        shadows in vecs(3, 3),
        vs in vecs(2, 3),
        grads in vecs(2, 3),
    ) {
        let g_agg = aggregate(&AggregatorSpec::new(Rule::CwMed, 1), &shadows).unwrap();
        let honest = &shadows[..2];
        let mean: Vec<f64> = (0..3).map(|j| (honest[0][j] + honest[1][j]) / 2.0).collect();
        let spread = honest.iter().map(|g| dist_sq(g, &mean)).sum::<f64>() / 2.0;
        prop_assume!(spread > 1e-9);
        let kappa = dist_sq(&g_agg, &mean) / spread;
        let refs: Vec<&[f64]> = honest.iter().map(Vec::as_slice).collect();
        let v_refs: Vec<&[f64]> = vs.iter().map(Vec::as_slice).collect();
        let report = lemma2_terms(&g_agg, &refs, &v_refs, &grads, Some(kappa)).unwrap();
        prop_assert!(report.holds, "lhs {} rhs {}", report.lhs, report.rhs);
    }

    #[test]
    fn gamma_max_is_monotone_in_kappa(k1 in 0.0f64..10.0, dk in 0.0f64..10.0, eta in 0.01f64..1.0) {
        let a = gamma_max(2.0, 3.0, k1, 0.5, eta).unwrap();
        let b = gamma_max(2.0, 3.0, k1 + dk, 0.5, eta).unwrap();
        prop_assert!(b <= a);
        prop_assert!(delta_constant(eta, k1 + dk, 0.5, 5) >= delta_constant(eta, k1, 0.5, 5));
    }
}

#[test]
fn lyapunov_vanishes_at_the_optimum() {
    let problem = make_synthetic(&SyntheticSpec {
        examples: 300,
        dim: 4,
        separation: 1.0,
        seed: 6,
        lambda: 0.05,
    })
    .unwrap();
    let shard = Shard::new(0, problem.examples.clone());
    let locals = [LocalLoss::new(&shard, problem.lambda)];
    let grad = locals[0].grad(&problem.x_star).unwrap();
    let params = LyapunovParams {
        loss_star: problem.loss_star(),
        gamma: 0.1,
        eta: 0.5,
        alpha: 0.25,
        kappa: 2.0,
    };
    let value = lyapunov_value(&problem.x_star, &[&grad], &locals, &params).unwrap();
    assert!(value.abs() < 1e-12, "{value}");

    let stale = LyapunovParams {
        loss_star: problem.loss_star() + 1e-3,
        ..params
    };
    assert!(lyapunov_value(&problem.x_star, &[&grad], &locals, &stale).is_err());
}
