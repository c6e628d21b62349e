//! The four predictors: deterministic baseline, MC-dropout, deep
//! ensemble, and prototypical few-shot. Each produces a probability
//! vector and a scalar uncertainty per query.

pub mod fewshot;
pub mod predict;

pub use fewshot::{
    compute_prototypes, episodic_eval, episodic_train, proto_predict, prototype_probabilities,
    sample_episode, Episode, EpisodeCheckpoint, EpisodeConfig, EpisodicEval,
    EpisodicTrainHistory, PrototypeSet,
};
pub use predict::{
    baseline_predict, ensemble_predict, ensemble_train, load_ensemble, mc_dropout_predict,
    save_ensemble, EnsembleMemberConfig, EnsembleModel, McDropoutConfig,
};

pub use crate::nets::softmax;

use crate::error::{Error, Result};
use crate::nets::{forward, ForwardMode, MlpModel};

/// Component-wise mean of equal-length vectors with two exactness
/// guarantees: identical inputs average to themselves bit-for-bit, and
/// the result is invariant under input permutation (each column is
/// sorted by total order before summing).
pub fn mean_vectors(rows: &[Vec<f64>]) -> Vec<f64> {
    assert!(!rows.is_empty(), "mean of zero vectors");
    let dim = rows[0].len();
    let n = rows.len() as f64;
    let mut out = Vec::with_capacity(dim);
    let mut column = vec![0.0; rows.len()];
    for j in 0..dim {
        let first = rows[0][j];
        if rows.iter().all(|r| r[j].to_bits() == first.to_bits()) {
            out.push(first);
            continue;
        }
        for (slot, r) in column.iter_mut().zip(rows) {
            *slot = r[j];
        }
        column.sort_by(|a, b| a.total_cmp(b));
        out.push(column.iter().sum::<f64>() / n);
    }
    out
}

/// Deterministic forward truncated at the last hidden layer: the
/// embedding head used by the prototypical method. Dropout is never
/// applied here.
pub fn embed(model: &MlpModel, x: &[f64]) -> Result<Vec<f64>> {
    if model.embedding_dim().is_none() {
        return Err(Error::InvalidModel("no hidden layer to embed with".to_string()));
    }
    let (_, cache) = forward(model, x, ForwardMode::Deterministic)?;
    Ok(cache.hidden_post.last().unwrap().clone())
}
