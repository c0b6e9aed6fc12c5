//! Run orchestration: configuration, the round loop, metrics and
//! diagnostics, the step-size calculator, message traces and experiment
//! matrices.

pub mod config;
mod dataset;
pub mod diagnostics;
pub mod matrix;
pub mod metrics;
mod sim;
pub mod theory;
pub mod trace;

use std::fs;
use std::path::Path;

pub use config::{
    apply_override, merge_tables, Algorithm, ByzInit, DatasetSpec, Partition, RunConfig, TheorySpec,
};
pub use dataset::{load_dataset, LoadedData};
pub use metrics::{RoundMetrics, METRICS_HEADER};
pub use sim::{
    manifest_string, run, run_with_data, Derived, RunOptions, RunOutput, Simulation,
    DIVERGENCE_LOSS,
};

use crate::Result;

pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";

/// Writes `metrics.csv` and then `manifest.toml` into `dir`.
///
/// The manifest is written last, so its presence marks a finished run.
pub fn write_run_outputs(dir: &Path, output: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(METRICS_FILE), output.metrics_csv())?;
    fs::write(dir.join(MANIFEST_FILE), output.manifest())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::AttackKind;
    use crate::aggregators::Rule;
    use crate::AutoOr;

    fn small(attack: AttackKind, algorithm: Algorithm) -> RunConfig {
        let mut c = RunConfig::from_toml_str(
            r#"
n = 7
f = 2
seed = 3
rounds = 40
gamma = 0.05
eta = 0.2
eval_every = 10
[compressor]
kind = "top-k"
k = 2
[aggregator]
rule = "cwtm"
use_nnm = true
[dataset]
kind = "synthetic"
examples = 140
dim = 5
separation = 2.0
"#,
        )
        .unwrap();
        c.attack.kind = attack;
        c.algorithm = algorithm;
        if algorithm == Algorithm::BrCsgd {
            c.compressor = crate::CompressorSpec::rand_k(2);
        }
        c
    }

    #[test]
    fn zero_rounds_returns_start_and_no_metrics() {
        let mut c = small(AttackKind::None, Algorithm::ByzEf21Sgdm);
        c.rounds = 0;
        let out = run(c, RunOptions::default()).unwrap();
        assert_eq!(out.x, vec![0.0; 5]);
        assert!(out.metrics.is_empty());
    }

    #[test]
    fn every_attack_runs_and_keeps_shadows_in_sync() {
        for attack in [AttackKind::None, AttackKind::Sf, AttackKind::Lf, AttackKind::Ipm, AttackKind::Alie] {
            let mut sim = Simulation::from_config(small(attack, Algorithm::ByzEf21Sgdm), RunOptions::default()).unwrap();
            for _ in 0..25 {
                sim.advance().unwrap();
                assert_eq!(sim.shadow_mismatches(), 0, "{attack}");
            }
            let out = sim.run().unwrap();
            assert_eq!(out.metrics.last().unwrap().round, 40);
            assert!(out.metrics.iter().all(|m| m.train_loss.is_finite()));
        }
    }

    #[test]
    fn metric_schedule_and_bit_accounting() {
        let out = run(small(AttackKind::Sf, Algorithm::ByzEf21Sgdm), RunOptions::default()).unwrap();
        let rounds: Vec<u64> = out.metrics.iter().map(|m| m.round).collect();
        assert_eq!(rounds, vec![0, 10, 20, 30, 40]);
        // Top-2 over d = 5: index field of 3 bits.
        let per_round = 7 * 2 * (32 + 3);
        let first = out.metrics[0].uplink_bits;
        assert!(out.metrics[1].uplink_bits - first <= 10 * per_round);
        assert!(out.metrics.windows(2).all(|w| w[0].uplink_bits <= w[1].uplink_bits));
    }

    #[test]
    fn brcsgd_runs_under_every_attack() {
        for attack in [AttackKind::None, AttackKind::Sf, AttackKind::Lf, AttackKind::Ipm, AttackKind::Alie] {
            let out = run(small(attack, Algorithm::BrCsgd), RunOptions::default()).unwrap();
            assert!(out.metrics.iter().all(|m| m.lemma2_lhs.is_nan()));
            assert!(out.metrics.iter().all(|m| m.train_loss.is_finite()));
        }
    }

    #[test]
    fn parallel_and_serial_agree() {
        let a = run(small(AttackKind::Alie, Algorithm::ByzEf21Sgdm), RunOptions::parallel(false)).unwrap();
        let b = run(small(AttackKind::Alie, Algorithm::ByzEf21Sgdm), RunOptions::parallel(true)).unwrap();
        assert_eq!(a.metrics_csv(), b.metrics_csv());
        assert_eq!(a.manifest(), b.manifest());
    }

    #[test]
    fn manifest_reproduces_run() {
        let mut c = small(AttackKind::Ipm, Algorithm::ByzEf21Sgdm);
        c.gamma = AutoOr::Auto;
        c.kappa = Some(4.0);
        let a = run(c, RunOptions::default()).unwrap();
        let again = RunConfig::from_toml_str(&a.manifest()).unwrap();
        assert!(matches!(again.gamma, AutoOr::Value(_)));
        assert_eq!(again.aggregator.f, Some(2));
        assert!(again.dataset.expected_sha256().is_some());
        let b = run(again, RunOptions::default()).unwrap();
        assert_eq!(a.metrics_csv(), b.metrics_csv());
        assert_eq!(a.manifest(), b.manifest());
    }

    #[test]
    fn large_step_diverges() {
        let mut c = small(AttackKind::None, Algorithm::ByzEf21Sgdm);
        c.f = 0;
        c.aggregator.rule = Rule::Avg;
        c.aggregator.use_nnm = false;
        c.gamma = AutoOr::Value(1e9);
        c.eta = AutoOr::Value(1.0);
        c.eval_every = 1;
        let out = run(c, RunOptions::default()).unwrap();
        assert!(out.diverged);
    }

    #[test]
    fn outputs_are_written_manifest_last() {
        let dir = tempfile::tempdir().unwrap();
        let out = run(small(AttackKind::None, Algorithm::ByzEf21Sgdm), RunOptions::default()).unwrap();
        write_run_outputs(dir.path(), &out).unwrap();
        let csv = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert!(csv.starts_with(METRICS_HEADER));
        assert!(dir.path().join(MANIFEST_FILE).exists());
    }
}
