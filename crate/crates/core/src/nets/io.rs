//! Model persistence: a self-describing JSON container with a magic
//! string, format version, layer dims, dropout rates, and row-major
//! parameter arrays. Numbers are written in shortest round-trip form, so
//! save → load → save reproduces parameters bit-exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::model::{Matrix, MlpModel};

pub const MODEL_MAGIC: &str = "shiftbench.model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    magic: String,
    version: u32,
    layer_dims: Vec<usize>,
    dropout_rates: Vec<f64>,
    seed: u64,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
}

pub fn save_model(model: &MlpModel, path: &Path) -> Result<()> {
    model.validate()?;
    let file = ModelFile {
        magic: MODEL_MAGIC.to_string(),
        version: MODEL_VERSION,
        layer_dims: model.layer_dims.clone(),
        dropout_rates: model.dropout_rates.clone(),
        seed: model.seed,
        weights: model.weights.clone(),
        biases: model.biases.clone(),
    };
    let body = serde_json::to_string(&file).map_err(|e| Error::ModelFile {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    fs::write(path, body).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<MlpModel> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile = serde_json::from_str(&body).map_err(|e| Error::ModelFile {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if file.magic != MODEL_MAGIC {
        return Err(Error::ModelFile {
            path: path.to_path_buf(),
            message: format!("bad magic {:?}", file.magic),
        });
    }
    if file.version != MODEL_VERSION {
        return Err(Error::ModelFile {
            path: path.to_path_buf(),
            message: format!("unsupported version {}", file.version),
        });
    }
    let model = MlpModel {
        layer_dims: file.layer_dims,
        weights: file.weights,
        biases: file.biases,
        dropout_rates: file.dropout_rates,
        seed: file.seed,
    };
    model.validate()?;
    Ok(model)
}
