//! Baseline, MC-dropout, and deep-ensemble predictors.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mean_vectors;
use crate::datamodel::{LabeledSample, PredictionRecord, ProbabilityVector};
use crate::error::{Error, Result};
use crate::metrics::shannon_entropy;
use crate::nets::{
    forward, load_model, save_model, softmax, train, ForwardMode, MlpModel, TrainConfig,
    TrainHistory,
};
use crate::rng::RngStream;

fn assemble(probs: Vec<f64>, true_label: usize, method: &str) -> Result<PredictionRecord> {
    let probs = ProbabilityVector::new(probs)?;
    let uncertainty = shannon_entropy(probs.as_slice())?;
    Ok(PredictionRecord {
        probs,
        true_label,
        uncertainty,
        method: method.to_string(),
    })
}

/// Single deterministic forward: probs = softmax(f(x)), uncertainty =
/// entropy of probs.
pub fn baseline_predict(model: &MlpModel, sample: &LabeledSample) -> Result<PredictionRecord> {
    let (logits, _) = forward(model, &sample.features, ForwardMode::Deterministic)?;
    assemble(softmax(&logits), sample.label, "baseline")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McDropoutConfig {
    /// Stochastic passes T. The shipped default is 50; 100 is the other
    /// documented operating point and any T ≥ 1 is accepted.
    pub passes: usize,
    pub seed: u64,
}

impl Default for McDropoutConfig {
    fn default() -> McDropoutConfig {
        McDropoutConfig { passes: 50, seed: 0 }
    }
}

/// Mean of T dropout-mode softmax outputs; uncertainty = entropy of the
/// mean. Pass t draws from the stream (seed, t), so passes are
/// independent of evaluation order.
///
/// With all-zero dropout rates every pass equals the deterministic
/// forward and the mean collapses to it bit-exactly; a warning is logged
/// because the method then adds nothing over the baseline.
pub fn mc_dropout_predict(
    model: &MlpModel,
    sample: &LabeledSample,
    cfg: &McDropoutConfig,
) -> Result<PredictionRecord> {
    if cfg.passes < 1 {
        return Err(Error::InvalidConfig("mc-dropout needs T >= 1".to_string()));
    }
    if model.dropout_rates.iter().all(|&r| r == 0.0) {
        log::warn!("mc-dropout on a model whose dropout rates are all zero");
    }
    let mut per_pass = Vec::with_capacity(cfg.passes);
    for pass in 0..cfg.passes {
        let mut rng = RngStream::new(cfg.seed, pass as u64);
        let (logits, _) = forward(model, &sample.features, ForwardMode::Dropout(&mut rng))?;
        per_pass.push(softmax(&logits));
    }
    assemble(mean_vectors(&per_pass), sample.label, "mc_dropout")
}

/// Independently trained members whose softmax outputs are averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub members: Vec<MlpModel>,
}

impl EnsembleModel {
    pub fn new(members: Vec<MlpModel>) -> Result<EnsembleModel> {
        if members.is_empty() {
            return Err(Error::InvalidModel("empty ensemble".to_string()));
        }
        let (dim, classes) = (members[0].input_dim(), members[0].class_count());
        for (i, m) in members.iter().enumerate() {
            m.validate()?;
            if m.input_dim() != dim || m.class_count() != classes {
                return Err(Error::InvalidModel(format!(
                    "member {i} shape {}->{} != {dim}->{classes}",
                    m.input_dim(),
                    m.class_count()
                )));
            }
        }
        Ok(EnsembleModel { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMemberConfig {
    pub layer_dims: Vec<usize>,
    pub dropout_rates: Vec<f64>,
    pub train: TrainConfig,
}

/// Train each member independently under its own seed. Member diversity
/// comes from differing hidden widths and seeds.
pub fn ensemble_train(
    member_cfgs: &[EnsembleMemberConfig],
    train_ds: &crate::datamodel::Dataset,
    val_ds: &crate::datamodel::Dataset,
) -> Result<(EnsembleModel, Vec<TrainHistory>)> {
    if member_cfgs.len() < 2 {
        return Err(Error::InvalidConfig(
            "an ensemble needs at least 2 member configs".to_string(),
        ));
    }
    let mut members = Vec::with_capacity(member_cfgs.len());
    let mut histories = Vec::with_capacity(member_cfgs.len());
    for (index, mc) in member_cfgs.iter().enumerate() {
        let wrap = |e: Error| Error::EnsembleMember {
            index,
            source: Box::new(e),
        };
        let init =
            crate::nets::init_model(&mc.layer_dims, &mc.dropout_rates, mc.train.seed)
                .map_err(wrap)?;
        let (trained, history) = train(&init, train_ds, val_ds, &mc.train).map_err(wrap)?;
        members.push(trained);
        histories.push(history);
    }
    Ok((EnsembleModel::new(members)?, histories))
}

/// Mean of the members' deterministic softmax outputs; uncertainty =
/// entropy of the mean. Permutation-invariant over members, and an
/// ensemble of identical members reproduces the single member exactly.
pub fn ensemble_predict(ens: &EnsembleModel, sample: &LabeledSample) -> Result<PredictionRecord> {
    if ens.members.is_empty() {
        return Err(Error::InvalidModel("empty ensemble".to_string()));
    }
    let mut outputs = Vec::with_capacity(ens.members.len());
    for m in &ens.members {
        let (logits, _) = forward(m, &sample.features, ForwardMode::Deterministic)?;
        outputs.push(softmax(&logits));
    }
    assemble(mean_vectors(&outputs), sample.label, "ensemble")
}

pub const ENSEMBLE_MAGIC: &str = "shiftbench.ensemble";
pub const ENSEMBLE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct EnsembleManifest {
    magic: String,
    version: u32,
    members: Vec<String>,
}

/// Write the ensemble as a directory: one model file per member plus a
/// manifest listing them in order.
pub fn save_ensemble(ens: &EnsembleModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::with_capacity(ens.members.len());
    for (i, m) in ens.members.iter().enumerate() {
        let name = format!("member_{i:02}.model");
        save_model(m, &dir.join(&name))?;
        names.push(name);
    }
    let manifest = EnsembleManifest {
        magic: ENSEMBLE_MAGIC.to_string(),
        version: ENSEMBLE_VERSION,
        members: names,
    };
    let body = serde_json::to_string(&manifest).map_err(|e| Error::ModelFile {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })?;
    fs::write(dir.join("manifest.json"), body).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

pub fn load_ensemble(dir: &Path) -> Result<EnsembleModel> {
    let manifest_path = dir.join("manifest.json");
    let body = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: EnsembleManifest =
        serde_json::from_str(&body).map_err(|e| Error::ModelFile {
            path: manifest_path.clone(),
            message: e.to_string(),
        })?;
    if manifest.magic != ENSEMBLE_MAGIC {
        return Err(Error::ModelFile {
            path: manifest_path,
            message: format!("bad magic {:?}", manifest.magic),
        });
    }
    if manifest.version != ENSEMBLE_VERSION {
        return Err(Error::ModelFile {
            path: manifest_path,
            message: format!("unsupported version {}", manifest.version),
        });
    }
    let mut members = Vec::with_capacity(manifest.members.len());
    for (index, name) in manifest.members.iter().enumerate() {
        let member = load_model(&dir.join(name)).map_err(|e| Error::EnsembleMember {
            index,
            source: Box::new(e),
        })?;
        members.push(member);
    }
    EnsembleModel::new(members)
}
