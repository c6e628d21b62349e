//! Small fully-connected classifier trained from scratch: forward passes
//! with inverted dropout, analytic backprop, Adam, and model files.

pub mod io;
pub mod model;
pub mod train;

pub use io::{load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use model::{
    backward, backward_from_embedding, forward, forward_with_masks, init_model, sample_loss,
    ForwardCache, ForwardMode, Gradients, Matrix, MlpModel,
};
pub use train::{train, AdamState, EpochStats, TrainConfig, TrainHistory};

/// Numerically stable softmax: p_c = exp(x_c − max) / Σ exp(x_j − max).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Cross-entropy of the true class, natural log, with the probability
/// clamped at 1e-12 before the log.
///
/// This is the optimization loss; the reported uncertainty metric uses
/// base-2 entropy instead and the two are intentionally distinct.
pub fn cross_entropy_loss(probs: &[f64], true_label: usize) -> f64 {
    -probs[true_label].max(1e-12).ln()
}
