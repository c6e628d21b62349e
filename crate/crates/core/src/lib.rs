//! Predictive-uncertainty benchmark for classifiers under distribution shift.
//!
//! The crate trains a small feedforward classifier from scratch and compares
//! four ways of turning it into a probabilistic predictor: a deterministic
//! baseline, Monte-Carlo dropout, a deep ensemble, and a prototypical few-shot
//! learner. Each predictor is scored for predictive performance (accuracy,
//! AUROC, AUPR) and entropy-based uncertainty across a grid of synthetic
//! distribution shifts, from an internal test split up to a full modality
//! change. The [`harness`] module drives the whole grid and renders report
//! tables; the `shiftbench` binary exposes it on the command line.

pub mod datamodel;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nets;
pub mod rng;
pub mod shiftgen;
pub mod uq;

pub use error::{Error, Result};
