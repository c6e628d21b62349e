//! Central finite-difference check of the analytic gradients.
//!
//! The numeric side differentiates the scalar loss parameter by
//! parameter with dropout masks frozen, so the loss stays a smooth
//! function of the weights. Shared by the gradient oracle tests and the
//! acceptance suite.

use rand::Rng;
use shiftbench::nets::{backward, forward_with_masks, init_model, sample_loss, MlpModel};
use shiftbench::rng::RngStream;

const FD_STEP: f64 = 1e-5;
pub const MAX_REL_ERR: f64 = 1e-4;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

fn numeric_gradient(
    model: &MlpModel,
    x: &[f64],
    masks: &[Vec<f64>],
    label: usize,
    l2: f64,
    perturb: impl Fn(&mut MlpModel, f64),
) -> f64 {
    let mut plus = model.clone();
    perturb(&mut plus, FD_STEP);
    let mut minus = model.clone();
    perturb(&mut minus, -FD_STEP);
    let lp = sample_loss(&plus, x, masks, label, l2).unwrap();
    let lm = sample_loss(&minus, x, masks, label, l2).unwrap();
    (lp - lm) / (2.0 * FD_STEP)
}

fn random_masks(model: &MlpModel, rng: &mut RngStream, with_dropout: bool) -> Vec<Vec<f64>> {
    model
        .layer_dims
        .iter()
        .skip(1)
        .take(model.layer_dims.len() - 2)
        .enumerate()
        .map(|(l, &dim)| {
            (0..dim)
                .map(|_| {
                    if with_dropout && rng.gen::<f64>() < 0.3 {
                        0.0
                    } else if with_dropout {
                        let rate = model.dropout_rates[l];
                        1.0 / (1.0 - rate)
                    } else {
                        1.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Compare every weight and bias gradient of one randomly shaped model
/// against the numeric oracle; returns the worst relative error.
pub fn check_one_model(shape_index: u64, with_dropout: bool, l2: f64) -> f64 {
    let mut rng = RngStream::new(shape_index, 901);
    let depth = rng.gen_range(2..=4usize);
    let dims: Vec<usize> = (0..=depth).map(|_| rng.gen_range(2..=8usize)).collect();
    let rates: Vec<f64> = (0..depth.saturating_sub(1))
        .map(|_| if with_dropout { 0.3 } else { 0.0 })
        .collect();
    let model = init_model(&dims, &rates, shape_index.wrapping_add(17)).unwrap();

    let x: Vec<f64> = (0..dims[0]).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
    let label = rng.gen_range(0..dims[depth]);
    let masks = random_masks(&model, &mut rng, with_dropout);

    let (_, cache) = forward_with_masks(&model, &x, &masks).unwrap();
    let grads = backward(&model, &cache, label, l2).unwrap();

    let mut worst = 0.0f64;
    for l in 0..model.weights.len() {
        for idx in 0..model.weights[l].data.len() {
            let analytic = grads.weights[l].data[idx];
            let numeric = numeric_gradient(&model, &x, &masks, label, l2, |m, h| {
                m.weights[l].data[idx] += h;
            });
            worst = worst.max(relative_error(analytic, numeric));
        }
        for idx in 0..model.biases[l].len() {
            let analytic = grads.biases[l][idx];
            let numeric = numeric_gradient(&model, &x, &masks, label, l2, |m, h| {
                m.biases[l][idx] += h;
            });
            worst = worst.max(relative_error(analytic, numeric));
        }
    }
    worst
}
