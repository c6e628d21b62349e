//! Analytic backprop pinned to the central finite-difference oracle in
//! `fd`, over three regimes: plain, frozen dropout masks, and L2.

#[path = "fd/mod.rs"]
mod fd;

use fd::{check_one_model, MAX_REL_ERR};

#[test]
fn backprop_matches_finite_differences_without_dropout() {
    for i in 0..15 {
        let worst = check_one_model(i, false, 0.0);
        assert!(worst < MAX_REL_ERR, "shape {i}: max relative error {worst}");
    }
}

#[test]
fn backprop_matches_finite_differences_with_dropout_masks() {
    for i in 100..115 {
        let worst = check_one_model(i, true, 0.0);
        assert!(worst < MAX_REL_ERR, "shape {i}: max relative error {worst}");
    }
}

#[test]
fn backprop_matches_finite_differences_with_l2() {
    for i in 200..210 {
        let worst = check_one_model(i, i % 2 == 0, 0.01);
        assert!(worst < MAX_REL_ERR, "shape {i}: max relative error {worst}");
    }
}
