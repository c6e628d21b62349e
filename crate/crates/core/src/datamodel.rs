//! Samples, datasets, shift tags, and prediction records, plus the
//! line-delimited file formats that carry them between pipeline stages.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{streams, RngStream};

/// Which slice of the experiment grid a sample belongs to.
///
/// The seven named tags cover the standard suite: in-domain train/test,
/// two in-distribution shifts (measurement-process shift, disease
/// sub-types), and three out-of-distribution shifts (novel condition at
/// near and far displacement, different acquisition modality). `Custom`
/// carries any other tag through the file formats untouched.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DistributionTag {
    InTrain,
    InTest,
    ExtProt,
    Ext5ad,
    OodScc,
    OodCad,
    OodCxr,
    Custom(String),
}

impl DistributionTag {
    pub fn parse(s: &str) -> DistributionTag {
        match s {
            "in_train" => DistributionTag::InTrain,
            "in_test" => DistributionTag::InTest,
            "ext_prot" => DistributionTag::ExtProt,
            "ext_5ad" => DistributionTag::Ext5ad,
            "ood_scc" => DistributionTag::OodScc,
            "ood_cad" => DistributionTag::OodCad,
            "ood_cxr" => DistributionTag::OodCxr,
            other => DistributionTag::Custom(other.to_string()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            DistributionTag::InTrain => "in_train",
            DistributionTag::InTest => "in_test",
            DistributionTag::ExtProt => "ext_prot",
            DistributionTag::Ext5ad => "ext_5ad",
            DistributionTag::OodScc => "ood_scc",
            DistributionTag::OodCad => "ood_cad",
            DistributionTag::OodCxr => "ood_cxr",
            DistributionTag::Custom(name) => name,
        }
    }

    /// Tags whose ground-truth labels fall outside the trained classes.
    pub fn is_ood(&self) -> bool {
        matches!(
            self,
            DistributionTag::OodScc | DistributionTag::OodCad | DistributionTag::OodCxr
        )
    }

    /// Tags drawn from the same distribution the models trained on.
    pub fn is_in_domain(&self) -> bool {
        matches!(self, DistributionTag::InTrain | DistributionTag::InTest)
    }

    /// The six tags models are evaluated on (everything but `in_train`).
    pub fn eval_tags() -> [DistributionTag; 6] {
        [
            DistributionTag::InTest,
            DistributionTag::ExtProt,
            DistributionTag::Ext5ad,
            DistributionTag::OodScc,
            DistributionTag::OodCad,
            DistributionTag::OodCxr,
        ]
    }

    pub fn all_tags() -> [DistributionTag; 7] {
        [
            DistributionTag::InTrain,
            DistributionTag::InTest,
            DistributionTag::ExtProt,
            DistributionTag::Ext5ad,
            DistributionTag::OodScc,
            DistributionTag::OodCad,
            DistributionTag::OodCxr,
        ]
    }
}

impl fmt::Display for DistributionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for DistributionTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for DistributionTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(DistributionTag::parse(&s))
    }
}

/// One feature vector with its class label and the distribution it was
/// drawn from.
///
/// `subtype` is populated only by the sub-type shift generator, which
/// scatters the positive class across several sub-clusters and records
/// which one each sample came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: usize,
    #[serde(rename = "dist")]
    pub dist_tag: DistributionTag,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub subtype: Option<usize>,
}

impl LabeledSample {
    pub fn new(features: Vec<f64>, label: usize, dist_tag: DistributionTag) -> LabeledSample {
        LabeledSample {
            features,
            label,
            dist_tag,
            subtype: None,
        }
    }
}

/// An ordered, validated collection of samples.
///
/// Invariants, checked at construction: non-empty, one shared feature
/// dimension, every label below `class_count`, all features finite.
/// Sample identity for disjointness arguments is (name, index); suite
/// generators give every tag its own dataset name so cross-tag overlap
/// cannot occur.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub class_count: usize,
    pub feature_dim: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        samples: Vec<LabeledSample>,
        class_count: usize,
    ) -> Result<Dataset> {
        let name = name.into();
        if samples.is_empty() {
            return Err(Error::InvalidDataset {
                name,
                message: "no samples".to_string(),
            });
        }
        let feature_dim = samples[0].features.len();
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != feature_dim {
                return Err(Error::InvalidDataset {
                    name,
                    message: format!(
                        "sample {i}: feature dimension {} != {feature_dim}",
                        s.features.len()
                    ),
                });
            }
            if s.label >= class_count {
                return Err(Error::InvalidDataset {
                    name,
                    message: format!("sample {i}: label {} out of range 0..{class_count}", s.label),
                });
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidDataset {
                    name,
                    message: format!("sample {i}: non-finite feature"),
                });
            }
        }
        Ok(Dataset {
            samples,
            class_count,
            feature_dim,
            name,
        })
    }

    /// Build a dataset inferring `class_count` as max label + 1.
    pub fn from_samples(name: impl Into<String>, samples: Vec<LabeledSample>) -> Result<Dataset> {
        let class_count = samples.iter().map(|s| s.label + 1).max().unwrap_or(0);
        Dataset::new(name, samples, class_count)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Indices of all samples with the given label, in dataset order.
    pub fn indices_of_class(&self, label: usize) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == label)
            .map(|(i, _)| i)
            .collect()
    }

    /// New dataset holding the given rows, in the given order.
    pub fn subset(&self, name: impl Into<String>, indices: &[usize]) -> Result<Dataset> {
        let samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        Dataset::new(name, samples, self.class_count)
    }
}

/// A normalized class distribution: entries in [0,1] summing to 1 ± 1e-9.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(p: Vec<f64>) -> Result<ProbabilityVector> {
        if p.is_empty() {
            return Err(Error::InvalidProbability("empty vector".to_string()));
        }
        for (i, &v) in p.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0 + Self::SUM_TOLERANCE).contains(&v) {
                return Err(Error::InvalidProbability(format!("entry {i} = {v}")));
            }
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InvalidProbability(format!("sum {sum}")));
        }
        Ok(ProbabilityVector(p))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry; ties break toward the lower index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn max(&self) -> f64 {
        self.0[self.argmax()]
    }
}

impl std::ops::Index<usize> for ProbabilityVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// One prediction: class distribution, ground truth, scalar uncertainty,
/// and which method produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub probs: ProbabilityVector,
    pub true_label: usize,
    pub uncertainty: f64,
    pub method: String,
}

impl PredictionRecord {
    pub fn predicted_label(&self) -> usize {
        self.probs.argmax()
    }

    pub fn is_correct(&self) -> bool {
        self.predicted_label() == self.true_label
    }
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string())
}

/// Load a line-delimited dataset file.
///
/// Each line is a map `{"features": [..], "label": n, "dist": "tag"}`
/// with an optional `"subtype"` key. `expected_dim` and
/// `expected_classes`, when given, turn dimension drift and
/// out-of-range labels into errors that name the offending line;
/// otherwise the dimension comes from the first record and the class
/// count is inferred as max label + 1. The dataset name is the file stem.
pub fn load_dataset(
    path: &Path,
    expected_dim: Option<usize>,
    expected_classes: Option<usize>,
) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut samples: Vec<LabeledSample> = Vec::new();
    let mut dim = expected_dim;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let sample: LabeledSample =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                path: path.to_path_buf(),
                line: lineno,
                message: e.to_string(),
            })?;
        match dim {
            None => dim = Some(sample.features.len()),
            Some(d) if sample.features.len() != d => {
                return Err(Error::MalformedRecord {
                    path: path.to_path_buf(),
                    line: lineno,
                    message: format!("feature dimension {} != {d}", sample.features.len()),
                });
            }
            _ => {}
        }
        if let Some(c) = expected_classes {
            if sample.label >= c {
                return Err(Error::MalformedRecord {
                    path: path.to_path_buf(),
                    line: lineno,
                    message: format!("label {} out of range 0..{c}", sample.label),
                });
            }
        }
        if sample.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::MalformedRecord {
                path: path.to_path_buf(),
                line: lineno,
                message: "non-finite feature".to_string(),
            });
        }
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset {
            path: path.to_path_buf(),
        });
    }
    let class_count = expected_classes
        .unwrap_or_else(|| samples.iter().map(|s| s.label + 1).max().unwrap_or(0));
    Dataset::new(stem_of(path), samples, class_count)
}

/// Write a dataset in the same line-delimited format `load_dataset` reads.
///
/// Numbers are rendered in shortest round-trip form, so
/// write → load → write is byte-identical.
pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(ds.len() * 64);
    for s in &ds.samples {
        serde_json::to_writer(&mut out, s).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Deserialize)]
struct LogitsLine {
    #[serde(default)]
    logits: Option<Vec<f64>>,
    #[serde(default)]
    probs: Option<Vec<f64>>,
    label: usize,
}

/// Load a logits/probabilities file into scored prediction records.
///
/// Each line holds `{"logits": [..]}` or `{"probs": [..]}` plus
/// `"label"`. Logits go through the stable softmax; probability rows
/// must already sum to 1 within 1e-6 and are renormalized exactly.
/// Uncertainty is filled with the entropy of the distribution.
pub fn load_logits(path: &Path, class_count: usize) -> Result<Vec<PredictionRecord>> {
    const PROB_SUM_TOLERANCE: f64 = 1e-6;
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let rec: LogitsLine = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let probs = match (rec.logits, rec.probs) {
            (Some(logits), None) => {
                if logits.len() != class_count {
                    return Err(malformed(format!(
                        "{} logits, expected {class_count}",
                        logits.len()
                    )));
                }
                if logits.iter().any(|v| !v.is_finite()) {
                    return Err(malformed("non-finite logit".to_string()));
                }
                crate::nets::softmax(&logits)
            }
            (None, Some(p)) => {
                if p.len() != class_count {
                    return Err(malformed(format!(
                        "{} probabilities, expected {class_count}",
                        p.len()
                    )));
                }
                if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(malformed("invalid probability entry".to_string()));
                }
                let sum: f64 = p.iter().sum();
                if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                    return Err(malformed(format!("probabilities sum to {sum}")));
                }
                p.into_iter().map(|v| v / sum).collect()
            }
            (Some(_), Some(_)) => {
                return Err(malformed("record has both logits and probs".to_string()));
            }
            (None, None) => {
                return Err(malformed("record has neither logits nor probs".to_string()));
            }
        };
        if rec.label >= class_count {
            return Err(malformed(format!(
                "label {} out of range 0..{class_count}",
                rec.label
            )));
        }
        let probs = ProbabilityVector::new(probs).map_err(|e| malformed(e.to_string()))?;
        let uncertainty = crate::metrics::shannon_entropy(probs.as_slice())?;
        records.push(PredictionRecord {
            probs,
            true_label: rec.label,
            uncertainty,
            method: "external".to_string(),
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset {
            path: path.to_path_buf(),
        });
    }
    Ok(records)
}

/// Deterministically shuffle and partition a dataset.
///
/// Fractions must be positive and sum to 1 within 1e-9. Partition sizes
/// come from cumulative rounding so they always sum to the dataset size.
pub fn split_dataset(ds: &Dataset, fractions: &[f64], seed: u64) -> Result<Vec<Dataset>> {
    let sum: f64 = fractions.iter().sum();
    if fractions.is_empty() || fractions.iter().any(|&f| f <= 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidFractions { sum });
    }
    let n = ds.len();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = RngStream::new(seed, streams::SPLIT);
    indices.shuffle(&mut rng);

    let mut parts = Vec::with_capacity(fractions.len());
    let mut cumulative = 0.0;
    let mut start = 0;
    for (i, &f) in fractions.iter().enumerate() {
        cumulative += f;
        let end = if i + 1 == fractions.len() {
            n
        } else {
            (cumulative * n as f64).round() as usize
        };
        if end <= start || end > n {
            return Err(Error::EmptyPartition { index: i });
        }
        parts.push(ds.subset(format!("{}_{i}", ds.name), &indices[start..end])?);
        start = end;
    }
    Ok(parts)
}
