//! Synthetic distribution-shift generators.
//!
//! The substrate is two unit-variance Gaussian clusters in ℝ^m separated
//! along the first axis. Each generator perturbs that base process in one
//! controlled way — a measurement-process transform, disease sub-clusters,
//! a displaced novel condition, or a different generative family — so shift
//! magnitude stays analytically controllable while every dataset satisfies
//! the same structural invariants.
//!
//! Every generator is a pure function of (params, seed), and parameter
//! settings that nullify a shift reproduce the base draw bit-identically.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Dataset, DistributionTag, LabeledSample};
use crate::error::{Error, Result};
use crate::rng::{streams, RngStream};

/// Per-scenario seed salts. Part of the reproducibility contract: the
/// suite derives one child seed per scenario from the master seed, so each
/// scenario's draw is independent of the others.
pub mod salts {
    pub const IN_DOMAIN: u64 = 0;
    pub const COVARIATE: u64 = 1;
    pub const SUBTYPE: u64 = 2;
    pub const NOVEL_NEAR: u64 = 3;
    pub const NOVEL_FAR: u64 = 4;
    pub const MODALITY: u64 = 5;
}

/// Shared geometry of the base process: class 0 centered at the origin,
/// class 1 at `separation` along axis 0, unit isotropic noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaseParams {
    pub n_train_per_class: usize,
    pub n_test_per_class: usize,
    /// Samples per class in each shifted evaluation set.
    pub n_eval_per_class: usize,
    pub feature_dim: usize,
    pub separation: f64,
}

impl Default for BaseParams {
    fn default() -> BaseParams {
        BaseParams {
            n_train_per_class: 500,
            n_test_per_class: 50,
            n_eval_per_class: 50,
            feature_dim: 8,
            separation: 8.0,
        }
    }
}

impl BaseParams {
    /// A separation of 0 is allowed: it collapses both classes onto one
    /// distribution, which is the degenerate case some properties are
    /// stated against.
    pub fn validate(&self) -> Result<()> {
        if self.n_train_per_class < 1 || self.n_test_per_class < 1 || self.n_eval_per_class < 1 {
            return Err(Error::InvalidConfig(
                "per-class sample counts must be >= 1".to_string(),
            ));
        }
        if self.feature_dim < 2 {
            return Err(Error::InvalidConfig("feature_dim must be >= 2".to_string()));
        }
        if !self.separation.is_finite() || self.separation < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "separation {} out of range",
                self.separation
            )));
        }
        Ok(())
    }

    fn center(&self, label: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.feature_dim];
        if label == 1 {
            c[0] = self.separation;
        }
        c
    }
}

fn draw_block(
    rng: &mut RngStream,
    n: usize,
    center: &[f64],
    label: usize,
    tag: &DistributionTag,
    out: &mut Vec<LabeledSample>,
) {
    for _ in 0..n {
        let features = center
            .iter()
            .map(|&c| c + rng.sample::<f64, _>(StandardNormal))
            .collect();
        out.push(LabeledSample::new(features, label, tag.clone()));
    }
}

/// The in-domain draw: training rows for both classes, then internal-test
/// rows for both classes, all from the base process. One dataset with the
/// split recorded in the tags; train and test rows are distinct draws, so
/// the two partitions share nothing.
pub fn gen_in_domain(base: &BaseParams, seed: u64) -> Result<Dataset> {
    base.validate()?;
    let mut rng = RngStream::new(seed, streams::DATA_GEN);
    let centers = [base.center(0), base.center(1)];
    let mut samples = Vec::with_capacity(2 * (base.n_train_per_class + base.n_test_per_class));
    for (label, center) in centers.iter().enumerate() {
        draw_block(
            &mut rng,
            base.n_train_per_class,
            center,
            label,
            &DistributionTag::InTrain,
            &mut samples,
        );
    }
    for (label, center) in centers.iter().enumerate() {
        draw_block(
            &mut rng,
            base.n_test_per_class,
            center,
            label,
            &DistributionTag::InTest,
            &mut samples,
        );
    }
    Dataset::new("in_domain", samples, 2)
}

/// Draw one evaluation-sized split of the base process: `n_eval_per_class`
/// rows for class 0, then for class 1. Every shifted generator starts from
/// this exact draw (same rng consumption), which is what makes their
/// null-parameter settings reproduce it bit-identically.
fn eval_draw(base: &BaseParams, rng: &mut RngStream, tag: &DistributionTag) -> Vec<LabeledSample> {
    let mut samples = Vec::with_capacity(2 * base.n_eval_per_class);
    for label in 0..2 {
        draw_block(
            rng,
            base.n_eval_per_class,
            &base.center(label),
            label,
            tag,
            &mut samples,
        );
    }
    samples
}

/// Measurement-process change: x ← s·R·x + b, where R rotates the (0,1)
/// coordinate plane by `rotation` radians and leaves the remaining axes
/// fixed. An empty offset means no offset at any dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AffineTransform {
    pub scale: f64,
    pub rotation: f64,
    pub offset: Vec<f64>,
}

impl Default for AffineTransform {
    fn default() -> AffineTransform {
        AffineTransform::identity()
    }
}

impl AffineTransform {
    pub fn identity() -> AffineTransform {
        AffineTransform {
            scale: 1.0,
            rotation: 0.0,
            offset: Vec::new(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0 && self.rotation == 0.0 && self.offset.iter().all(|&v| v == 0.0)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !self.scale.is_finite() || !self.rotation.is_finite() {
            return Err(Error::InvalidConfig("non-finite transform".to_string()));
        }
        if !self.offset.is_empty() && self.offset.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.offset.len(),
            });
        }
        if self.offset.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite offset".to_string()));
        }
        Ok(())
    }

    /// Identity parameters return the input unchanged, exactly: no
    /// multiply-by-one or add-zero rounding is allowed to perturb bits.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        if self.is_identity() {
            return x.to_vec();
        }
        let mut y: Vec<f64> = x.iter().map(|&v| self.scale * v).collect();
        if self.rotation != 0.0 && y.len() >= 2 {
            let (sin, cos) = self.rotation.sin_cos();
            let (a, b) = (y[0], y[1]);
            y[0] = cos * a - sin * b;
            y[1] = sin * a + cos * b;
        }
        for (v, o) in y.iter_mut().zip(&self.offset) {
            *v += o;
        }
        y
    }
}

/// Same disease, shifted measurement process: the base draw pushed through
/// an affine transform, labels untouched.
pub fn gen_covariate_shift(
    base: &BaseParams,
    transform: &AffineTransform,
    seed: u64,
) -> Result<Dataset> {
    base.validate()?;
    transform.validate(base.feature_dim)?;
    let mut rng = RngStream::new(seed, streams::DATA_GEN);
    let mut samples = eval_draw(base, &mut rng, &DistributionTag::ExtProt);
    if !transform.is_identity() {
        for s in samples.iter_mut() {
            s.features = transform.apply(&s.features);
        }
    }
    Dataset::new("ext_prot", samples, 2)
}

/// Disease sub-cluster layout: `k_subtypes` displacement directions, each
/// mostly along its own spare axis with a common component of magnitude
/// `boundary_pull` back toward the healthy class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubtypeParams {
    pub k_subtypes: usize,
    pub spread: f64,
    pub boundary_pull: f64,
}

impl Default for SubtypeParams {
    fn default() -> SubtypeParams {
        SubtypeParams {
            k_subtypes: 5,
            spread: 2.5,
            boundary_pull: 0.4,
        }
    }
}

impl SubtypeParams {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.k_subtypes < 2 {
            return Err(Error::InvalidConfig("k_subtypes must be >= 2".to_string()));
        }
        if !self.spread.is_finite() || self.spread < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "spread {} out of range",
                self.spread
            )));
        }
        if !self.boundary_pull.is_finite() {
            return Err(Error::InvalidConfig("non-finite boundary_pull".to_string()));
        }
        // Sub-type k displaces along axis 2 + k; axes 0 and 1 are reserved
        // for the class separation and the covariate rotation plane.
        if dim < 2 + self.k_subtypes {
            return Err(Error::InvalidConfig(format!(
                "feature_dim {dim} too small for {} sub-type axes",
                self.k_subtypes
            )));
        }
        Ok(())
    }

    /// Unit displacement direction of sub-type k.
    fn direction(&self, k: usize, dim: usize) -> Vec<f64> {
        let mut u = vec![0.0; dim];
        let norm = (self.boundary_pull * self.boundary_pull + 1.0).sqrt();
        u[0] = -self.boundary_pull / norm;
        u[2 + k] = 1.0 / norm;
        u
    }
}

/// Same label space, disease class scattered into sub-clusters. Sub-types
/// are assigned round-robin (no randomness spent), and each positive row
/// records its sub-type index.
pub fn gen_subtype_shift(base: &BaseParams, params: &SubtypeParams, seed: u64) -> Result<Dataset> {
    base.validate()?;
    params.validate(base.feature_dim)?;
    let mut rng = RngStream::new(seed, streams::DATA_GEN);
    let mut samples = eval_draw(base, &mut rng, &DistributionTag::Ext5ad);
    let positives: Vec<usize> = (0..samples.len())
        .filter(|&i| samples[i].label == 1)
        .collect();
    for (pos, &i) in positives.iter().enumerate() {
        let k = pos % params.k_subtypes;
        samples[i].subtype = Some(k);
        if params.spread != 0.0 {
            // The base draw put the row at c1 + z; shift it to the
            // sub-cluster center c1 + spread·u without redrawing z.
            let u = params.direction(k, base.feature_dim);
            for (j, v) in samples[i].features.iter_mut().enumerate() {
                *v += params.spread * u[j];
            }
        }
    }
    Dataset::new("ext_5ad", samples, 2)
}

/// A novel condition: healthy class unchanged, positive class replaced by
/// a cluster displaced from the disease center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NovelConditionParams {
    pub displacement: Vec<f64>,
}

impl NovelConditionParams {
    /// Near preset: the novel cluster lands beside the healthy one along
    /// the class axis but well off the training manifold in the rotation
    /// plane, staying at the base feature scale.
    pub fn near(base: &BaseParams) -> NovelConditionParams {
        let mut d = vec![0.0; base.feature_dim];
        d[0] = -0.9 * base.separation;
        d[1] = 6.0;
        NovelConditionParams { displacement: d }
    }

    /// Far preset: a stronger boundary-ward pull plus a step along the
    /// last axis, which the base process never separates on.
    pub fn far(base: &BaseParams) -> NovelConditionParams {
        let mut d = vec![0.0; base.feature_dim];
        d[0] = -0.4 * base.separation;
        d[base.feature_dim - 1] = 3.0;
        NovelConditionParams { displacement: d }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.displacement.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.displacement.len(),
            });
        }
        if self.displacement.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite displacement".to_string()));
        }
        Ok(())
    }
}

/// Novel-condition draw under the given OOD tag. Zero displacement
/// reduces to the base eval draw exactly.
pub fn gen_novel_condition(
    base: &BaseParams,
    params: &NovelConditionParams,
    tag: DistributionTag,
    seed: u64,
) -> Result<Dataset> {
    base.validate()?;
    params.validate(base.feature_dim)?;
    let name = tag.as_str().to_string();
    let mut rng = RngStream::new(seed, streams::DATA_GEN);
    let mut samples = eval_draw(base, &mut rng, &tag);
    if params.displacement.iter().any(|&v| v != 0.0) {
        for s in samples.iter_mut().filter(|s| s.label == 1) {
            for (v, d) in s.features.iter_mut().zip(&params.displacement) {
                *v += d;
            }
        }
    }
    Dataset::new(name, samples, 2)
}

/// A different generative family entirely: both class centers sit near the
/// base decision boundary on axis 0, the noise is anisotropic, and every
/// coordinate passes through the sinh warp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModalityParams {
    /// Axis-0 center of each class, pre-warp.
    pub class0_center: f64,
    pub class1_center: f64,
    pub axis_scales: Vec<f64>,
    /// Warp strength; the warp tends to the identity as gamma → 0.
    pub gamma: f64,
}

impl Default for ModalityParams {
    fn default() -> ModalityParams {
        ModalityParams {
            class0_center: 3.0,
            class1_center: 3.9,
            axis_scales: vec![1.8, 0.6, 1.4, 0.7, 1.2, 0.9, 1.3, 0.5],
            gamma: 0.3,
        }
    }
}

impl ModalityParams {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !self.class0_center.is_finite() || !self.class1_center.is_finite() {
            return Err(Error::InvalidConfig("non-finite class center".to_string()));
        }
        if self.axis_scales.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.axis_scales.len(),
            });
        }
        if self.axis_scales.iter().any(|&s| !s.is_finite() || s <= 0.0) {
            return Err(Error::InvalidConfig(
                "axis_scales must be positive and finite".to_string(),
            ));
        }
        if !self.gamma.is_finite() || self.gamma <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "gamma {} out of range",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Componentwise sinh(γt)/γ: odd, strictly increasing, identity-like near
/// the origin, superlinear in the tails.
pub fn modality_warp(params: &ModalityParams, x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&t| (params.gamma * t).sinh() / params.gamma)
        .collect()
}

/// Inverse of `modality_warp`.
pub fn modality_unwarp(params: &ModalityParams, y: &[f64]) -> Vec<f64> {
    y.iter()
        .map(|&t| (params.gamma * t).asinh() / params.gamma)
        .collect()
}

/// Modality-shift draw: both classes from the warped anisotropic family.
pub fn gen_modality_shift(base: &BaseParams, params: &ModalityParams, seed: u64) -> Result<Dataset> {
    base.validate()?;
    params.validate(base.feature_dim)?;
    let mut rng = RngStream::new(seed, streams::DATA_GEN);
    let centers = [params.class0_center, params.class1_center];
    let mut samples = Vec::with_capacity(2 * base.n_eval_per_class);
    for (label, &center) in centers.iter().enumerate() {
        for _ in 0..base.n_eval_per_class {
            let mut raw = vec![0.0; base.feature_dim];
            for (j, r) in raw.iter_mut().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                *r = params.axis_scales[j] * z;
            }
            raw[0] += center;
            samples.push(LabeledSample::new(
                modality_warp(params, &raw),
                label,
                DistributionTag::OodCxr,
            ));
        }
    }
    Dataset::new("ood_cxr", samples, 2)
}

/// Everything the suite generator needs, with defaults tuned so the
/// scenario grid reproduces the expected uncertainty ordering under the
/// shipped seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub base: BaseParams,
    pub covariate: AffineTransform,
    pub subtype: SubtypeParams,
    pub novel_near: NovelConditionParams,
    pub novel_far: NovelConditionParams,
    pub modality: ModalityParams,
}

impl Default for SuiteConfig {
    fn default() -> SuiteConfig {
        let base = BaseParams::default();
        SuiteConfig {
            covariate: AffineTransform {
                scale: 1.1,
                rotation: 0.2,
                offset: vec![-0.5, 1.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0],
            },
            subtype: SubtypeParams::default(),
            novel_near: NovelConditionParams::near(&base),
            novel_far: NovelConditionParams::far(&base),
            modality: ModalityParams::default(),
            base,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        let dim = self.base.feature_dim;
        self.covariate.validate(dim)?;
        self.subtype.validate(dim)?;
        self.novel_near.validate(dim)?;
        self.novel_far.validate(dim)?;
        self.modality.validate(dim)
    }
}

/// Generate the full seven-dataset grid. Each scenario draws from its own
/// seed derived from the master seed, so scenarios stay independent and
/// the whole suite reruns bit-identically.
pub fn gen_suite(
    cfg: &SuiteConfig,
    master_seed: u64,
) -> Result<BTreeMap<DistributionTag, Dataset>> {
    cfg.validate()?;
    let seed_for = |salt: u64| RngStream::derive_seed(master_seed, streams::DATA_GEN, salt);

    let in_domain = gen_in_domain(&cfg.base, seed_for(salts::IN_DOMAIN))?;
    let mut suite = BTreeMap::new();
    for tag in [DistributionTag::InTrain, DistributionTag::InTest] {
        let indices: Vec<usize> = in_domain
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.dist_tag == tag)
            .map(|(i, _)| i)
            .collect();
        suite.insert(tag.clone(), in_domain.subset(tag.as_str(), &indices)?);
    }
    suite.insert(
        DistributionTag::ExtProt,
        gen_covariate_shift(&cfg.base, &cfg.covariate, seed_for(salts::COVARIATE))?,
    );
    suite.insert(
        DistributionTag::Ext5ad,
        gen_subtype_shift(&cfg.base, &cfg.subtype, seed_for(salts::SUBTYPE))?,
    );
    suite.insert(
        DistributionTag::OodScc,
        gen_novel_condition(
            &cfg.base,
            &cfg.novel_near,
            DistributionTag::OodScc,
            seed_for(salts::NOVEL_NEAR),
        )?,
    );
    suite.insert(
        DistributionTag::OodCad,
        gen_novel_condition(
            &cfg.base,
            &cfg.novel_far,
            DistributionTag::OodCad,
            seed_for(salts::NOVEL_FAR),
        )?,
    );
    suite.insert(
        DistributionTag::OodCxr,
        gen_modality_shift(&cfg.base, &cfg.modality, seed_for(salts::MODALITY))?,
    );
    Ok(suite)
}
