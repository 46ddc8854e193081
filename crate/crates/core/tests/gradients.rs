//! Analytic gradients against central finite differences.

mod common;

use openaff::head::TemperatureMode;
use openaff::nn::GradCheckReport;

use common::kernels::{batch_norm_report, linear_report, log_softmax_report, max_pool_report, relu_report};
use common::oracles::full_model_report;

const SEEDS: u64 = 20;
const TOLERANCE: f64 = 1e-4;

#[test]
fn linear_gradients_are_exact() {
    for seed in 0..SEEDS {
        let report = linear_report(seed, 1.0);
        assert!(report.max_rel_error() < 1e-6, "seed {seed}: {report:?}");
        assert_eq!(report.excluded(), 0);
    }
}

#[test]
fn doubled_gradients_are_caught() {
    let report = linear_report(0, 2.0);
    assert!((report.max_rel_error() - 1.0).abs() < 1e-3, "{report:?}");
}

fn check_kernel(report: fn(u64) -> GradCheckReport) {
    for seed in 0..SEEDS {
        let r = report(seed);
        assert!(r.max_rel_error() < TOLERANCE, "seed {seed}: {r:?}");
    }
}

#[test]
fn relu_gradients() {
    check_kernel(relu_report);
}

#[test]
fn batch_norm_gradients() {
    check_kernel(batch_norm_report);
}

#[test]
fn max_pool_gradients() {
    check_kernel(max_pool_report);
}

#[test]
fn log_softmax_gradients() {
    check_kernel(log_softmax_report);
}

#[test]
fn full_model_gradients() {
    for seed in 0..SEEDS {
        for mode in [TemperatureMode::LogScale, TemperatureMode::TemperatureLiteral] {
            let report = full_model_report(seed, mode);
            assert!(report.max_rel_error() < TOLERANCE, "seed {seed} {mode:?}: {report:#?}");
            assert!(
                report.checked() > 10 * report.excluded(),
                "seed {seed}: too many kink exclusions"
            );
            assert!(report.block("head.logit_scale").unwrap().checked == 1);
        }
    }
}
