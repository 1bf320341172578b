//! Acceptance gate: every numbered criterion prints one PASS/FAIL line.
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use stance_core::harness;

fn check(r: harness::CriterionResult) {
    println!("{}", r.line());
    assert!(r.passed, "{}", r.line());
}

#[test]
fn criterion_1_separation_identity() {
    check(harness::criterion_1_separation_identity());
}

#[test]
fn criterion_2_grl_gradient_law() {
    check(harness::criterion_2_grl_gradient_law());
}

#[test]
fn criterion_3_combined_gradient() {
    check(harness::criterion_3_combined_gradient());
}

#[test]
fn criterion_4_metric_oracle() {
    check(harness::criterion_4_metric_oracle());
}

#[test]
fn criterion_5_gcn_reach() {
    check(harness::criterion_5_gcn_reach());
}

#[test]
fn criterion_6_overfit_sanity() {
    check(harness::criterion_6_overfit_sanity());
}

#[test]
fn criterion_7_adversarial_transfer() {
    check(harness::criterion_7_adversarial_transfer());
}

#[test]
fn criterion_8_suite_determinism() {
    check(harness::criterion_8_suite_determinism());
}

#[test]
fn criterion_9_parameter_count() {
    check(harness::criterion_9_parameter_count());
}
