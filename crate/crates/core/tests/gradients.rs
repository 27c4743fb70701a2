mod common;

use common::grad_cases::{self, GradCase, TOL};

fn assert_all(cases: Vec<GradCase>) {
    assert!(!cases.is_empty());
    for c in cases {
        assert!(c.max_rel_error < TOL, "{} seed {}: rel err {}", c.name, c.seed, c.max_rel_error);
    }
}

#[test]
fn elementwise_and_shape_ops() {
    assert_all(grad_cases::elementwise_and_shape_ops());
}

#[test]
fn products_and_normalizations() {
    assert_all(grad_cases::products_and_normalizations());
}

#[test]
fn full_updn_loss() {
    assert_all(grad_cases::full_updn_loss());
}

#[test]
fn full_selector_loss() {
    assert_all(grad_cases::full_selector_loss());
}
