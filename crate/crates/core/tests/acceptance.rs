//! Acceptance suite: one test per shipped criterion. Each prints its
//! PASS/FAIL line (run with --nocapture to see them) and asserts.

use relicseg_core::selftest::*;

fn check(outcome: CriterionOutcome) {
    println!("{}", outcome.line());
    assert!(outcome.passed, "{}", outcome.line());
}

#[test]
fn criterion_01_candidate_rule_oracle_equivalence() {
    check(criterion_1_candidate_oracle());
}

#[test]
fn criterion_02_contrastive_loss_oracle_and_gradients() {
    check(criterion_2_sc_loss_oracle());
}

#[test]
fn criterion_03_momentum_mirror() {
    check(criterion_3_momentum_mirror());
}

#[test]
fn criterion_04_queue_semantics() {
    check(criterion_4_queue_semantics());
}

#[test]
fn criterion_05_shape_contract() {
    check(criterion_5_shape_contract());
}

#[test]
fn criterion_06_metric_formulas() {
    check(criterion_6_metric_formulas());
}

#[test]
fn criterion_07_kriging_exactness() {
    check(criterion_7_kriging_exactness());
}

#[test]
fn criterion_08_overfit_probe() {
    check(criterion_8_overfit_probe());
}

#[test]
fn criterion_09_contrastive_effect_direction() {
    check(criterion_9_contrastive_effect());
}

#[test]
fn criterion_10_gradcam_oracle_and_golden_overlay() {
    check(criterion_10_gradcam());
}

#[test]
fn criterion_11_determinism_and_resume() {
    check(criterion_11_determinism_resume());
}
