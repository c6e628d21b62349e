//! Prototypical few-shot classification: class prototypes are mean
//! support embeddings, class scores are a softmax over negated Euclidean
//! distances, and the embedding is trained episodically.
//!
//! Few-shot evaluation is only meaningful on data the embedding never
//! trained on, so `episodic_eval` refuses in-domain tags outright.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{embed, mean_vectors};
use crate::datamodel::{Dataset, LabeledSample, PredictionRecord, ProbabilityVector};
use crate::error::{Error, Result};
use crate::metrics::{metric_block, MetricBlock};
use crate::nets::{
    backward_from_embedding, cross_entropy_loss, forward, softmax, AdamState, ForwardMode,
    Gradients, MlpModel,
};
use crate::rng::{streams, RngStream};

/// One few-shot task: `shot` support samples for each of `way` classes,
/// plus the queries to classify against them. Keys are the original
/// dataset labels; per-episode class indices follow their sorted order.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub support: BTreeMap<usize, Vec<LabeledSample>>,
    pub queries: Vec<LabeledSample>,
    pub way: usize,
    pub shot: usize,
}

impl Episode {
    pub fn validate(&self) -> Result<()> {
        if self.way < 2 || self.support.len() != self.way {
            return Err(Error::InvalidEpisode(format!(
                "{} support classes for a {}-way episode",
                self.support.len(),
                self.way
            )));
        }
        if self.shot < 1 {
            return Err(Error::InvalidEpisode("shot must be >= 1".to_string()));
        }
        let dim = match self.support.values().flatten().next() {
            Some(s) => s.features.len(),
            None => return Err(Error::InvalidEpisode("no support samples".to_string())),
        };
        for (&class, rows) in &self.support {
            if rows.len() != self.shot {
                return Err(Error::InvalidEpisode(format!(
                    "class {class} has {} support samples, expected {}",
                    rows.len(),
                    self.shot
                )));
            }
            for s in rows {
                if s.label != class || s.features.len() != dim {
                    return Err(Error::InvalidEpisode(format!(
                        "support sample under class {class} has label {} / dim {}",
                        s.label,
                        s.features.len()
                    )));
                }
            }
        }
        if self.queries.is_empty() {
            return Err(Error::InvalidEpisode("no queries".to_string()));
        }
        for q in &self.queries {
            if !self.support.contains_key(&q.label) {
                return Err(Error::InvalidEpisode(format!(
                    "query label {} has no support class",
                    q.label
                )));
            }
            if q.features.len() != dim {
                return Err(Error::InvalidEpisode(format!(
                    "query dim {} != support dim {dim}",
                    q.features.len()
                )));
            }
        }
        Ok(())
    }

    /// Original class labels in episode-local index order.
    pub fn classes(&self) -> Vec<usize> {
        self.support.keys().copied().collect()
    }
}

/// Mean support embedding per original class label.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    pub prototypes: BTreeMap<usize, Vec<f64>>,
}

/// Embed every support sample and average per class.
pub fn compute_prototypes(model: &MlpModel, episode: &Episode) -> Result<PrototypeSet> {
    episode.validate()?;
    let mut prototypes = BTreeMap::new();
    for (&class, rows) in &episode.support {
        let mut embeddings = Vec::with_capacity(rows.len());
        for s in rows {
            embeddings.push(embed(model, &s.features)?);
        }
        prototypes.insert(class, mean_vectors(&embeddings));
    }
    Ok(PrototypeSet { prototypes })
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Class membership probabilities for one embedding: softmax over the
/// negated Euclidean distances to each prototype. Returns the classes in
/// episode-local order alongside the probabilities.
///
/// This is also the geometry probe point: it sees only the embedding and
/// the prototypes, so invariances of the distance field (translation, the
/// effect of scaling) can be tested without a model.
pub fn prototype_probabilities(
    protos: &PrototypeSet,
    embedding: &[f64],
) -> Result<(Vec<usize>, Vec<f64>)> {
    if protos.prototypes.len() < 2 {
        return Err(Error::InvalidEpisode(
            "need at least 2 prototypes".to_string(),
        ));
    }
    let mut classes = Vec::with_capacity(protos.prototypes.len());
    let mut neg_dist = Vec::with_capacity(protos.prototypes.len());
    for (&class, z) in &protos.prototypes {
        if z.len() != embedding.len() {
            return Err(Error::DimensionMismatch {
                expected: z.len(),
                got: embedding.len(),
            });
        }
        classes.push(class);
        neg_dist.push(-euclidean(embedding, z));
    }
    Ok((classes, softmax(&neg_dist)))
}

/// Classify one query against the prototypes. The record's label and
/// probabilities are episode-local; uncertainty is 1 − max probability.
pub fn proto_predict(
    model: &MlpModel,
    protos: &PrototypeSet,
    query: &LabeledSample,
) -> Result<PredictionRecord> {
    let embedding = embed(model, &query.features)?;
    let (classes, probs) = prototype_probabilities(protos, &embedding)?;
    let local = classes
        .binary_search(&query.label)
        .map_err(|_| Error::InvalidEpisode(format!("query label {} has no prototype", query.label)))?;
    let probs = ProbabilityVector::new(probs)?;
    let uncertainty = 1.0 - probs.max();
    Ok(PredictionRecord {
        probs,
        true_label: local,
        uncertainty,
        method: "fsl".to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub way: usize,
    pub shot: usize,
    pub queries_per_class: usize,
    pub train_episodes: usize,
    /// Validate (and checkpoint) every this many training episodes.
    pub val_every: usize,
    pub val_episodes: usize,
    pub test_episodes: usize,
    pub learning_rate: f64,
    pub l2_weight: f64,
    pub seed: u64,
}

impl Default for EpisodeConfig {
    fn default() -> EpisodeConfig {
        EpisodeConfig {
            way: 2,
            shot: 5,
            queries_per_class: 5,
            train_episodes: 1000,
            val_every: 200,
            val_episodes: 100,
            test_episodes: 20,
            learning_rate: 1e-4,
            l2_weight: 5e-5,
            seed: 0,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.way < 2 {
            return Err(Error::InvalidConfig("way must be >= 2".to_string()));
        }
        if self.shot < 1 || self.queries_per_class < 1 {
            return Err(Error::InvalidConfig(
                "shot and queries_per_class must be >= 1".to_string(),
            ));
        }
        if self.val_every < 1 || self.val_episodes < 1 || self.test_episodes < 1 {
            return Err(Error::InvalidConfig(
                "val_every, val_episodes and test_episodes must be >= 1".to_string(),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning_rate {} out of range",
                self.learning_rate
            )));
        }
        if !self.l2_weight.is_finite() || self.l2_weight < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "l2_weight {} out of range",
                self.l2_weight
            )));
        }
        Ok(())
    }
}

/// Draw one episode: choose `way` of the classes present in the dataset,
/// then `shot + queries_per_class` distinct samples from each. Classes
/// are drawn in sorted order so the stream of random draws is a function
/// of the dataset content, not of storage order quirks.
pub fn sample_episode(
    ds: &Dataset,
    cfg: &EpisodeConfig,
    rng: &mut RngStream,
) -> Result<Episode> {
    let present: Vec<(usize, Vec<usize>)> = (0..ds.class_count)
        .map(|c| (c, ds.indices_of_class(c)))
        .filter(|(_, idx)| !idx.is_empty())
        .collect();
    if present.len() < cfg.way {
        return Err(Error::InvalidEpisode(format!(
            "dataset {} has {} classes with samples, episode needs {}",
            ds.name,
            present.len(),
            cfg.way
        )));
    }
    let mut chosen = rand::seq::index::sample(rng, present.len(), cfg.way).into_vec();
    chosen.sort_unstable();
    let needed = cfg.shot + cfg.queries_per_class;
    let mut support = BTreeMap::new();
    let mut queries = Vec::with_capacity(cfg.way * cfg.queries_per_class);
    for pos in chosen {
        let (class, indices) = &present[pos];
        if indices.len() < needed {
            return Err(Error::InsufficientClassSamples {
                class: *class,
                available: indices.len(),
                needed,
            });
        }
        let draw = rand::seq::index::sample(rng, indices.len(), needed).into_vec();
        let rows: Vec<LabeledSample> = draw
            .iter()
            .map(|&d| ds.samples[indices[d]].clone())
            .collect();
        support.insert(*class, rows[..cfg.shot].to_vec());
        queries.extend_from_slice(&rows[cfg.shot..]);
    }
    Ok(Episode {
        support,
        queries,
        way: cfg.way,
        shot: cfg.shot,
    })
}

/// Episode loss and its gradient with respect to the embedding layers.
///
/// For query embedding e and prototypes z_c at distances d_c, the class
/// scores are softmax over −d_c. With δ_c = p_c − 1[c = label]:
///   ∂L/∂e   = Σ_c δ_c · −(e − z_c)/d_c
///   ∂L/∂z_c = δ_c · (e − z_c)/d_c
/// and each support embedding of class c receives ∂L/∂z_c divided by the
/// shot count, since the prototype is their mean. Distances are floored
/// at 1e-12 in the denominators. The loss is summed over queries; the
/// classification head takes no part and its gradient stays zero.
fn episode_gradients(
    model: &MlpModel,
    episode: &Episode,
    l2_weight: f64,
) -> Result<(Gradients, f64)> {
    episode.validate()?;
    let classes = episode.classes();

    let mut support_caches = Vec::with_capacity(classes.len());
    let mut prototypes = Vec::with_capacity(classes.len());
    for class in &classes {
        let rows = &episode.support[class];
        let mut caches = Vec::with_capacity(rows.len());
        let mut embeddings = Vec::with_capacity(rows.len());
        for s in rows {
            let (_, cache) = forward(model, &s.features, ForwardMode::Deterministic)?;
            embeddings.push(cache.hidden_post.last().unwrap().clone());
            caches.push(cache);
        }
        prototypes.push(mean_vectors(&embeddings));
        support_caches.push(caches);
    }

    let dim = prototypes[0].len();
    let mut grad_proto = vec![vec![0.0; dim]; classes.len()];
    let mut total = Gradients::zeros_like(model);
    let mut loss = 0.0;
    for q in &episode.queries {
        let (_, cache) = forward(model, &q.features, ForwardMode::Deterministic)?;
        let e = cache.hidden_post.last().unwrap();
        let local = classes.binary_search(&q.label).expect("validated above");
        let dist: Vec<f64> = prototypes.iter().map(|z| euclidean(e, z)).collect();
        let neg_dist: Vec<f64> = dist.iter().map(|d| -d).collect();
        let p = softmax(&neg_dist);
        loss += cross_entropy_loss(&p, local);

        let mut grad_e = vec![0.0; dim];
        for c in 0..classes.len() {
            let delta = p[c] - if c == local { 1.0 } else { 0.0 };
            let denom = dist[c].max(1e-12);
            for j in 0..dim {
                let diff = e[j] - prototypes[c][j];
                grad_e[j] -= delta * diff / denom;
                grad_proto[c][j] += delta * diff / denom;
            }
        }
        total.accumulate(&backward_from_embedding(model, &cache, &grad_e, 0.0)?);
    }

    for (c, caches) in support_caches.iter().enumerate() {
        let per_member: Vec<f64> = grad_proto[c]
            .iter()
            .map(|g| g / caches.len() as f64)
            .collect();
        for cache in caches {
            total.accumulate(&backward_from_embedding(model, cache, &per_member, 0.0)?);
        }
    }
    if l2_weight != 0.0 {
        total.add_l2(model, l2_weight, 0..model.hidden_count());
    }
    Ok((total, loss))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeCheckpoint {
    pub episode: usize,
    /// Mean episode loss since the previous checkpoint.
    pub mean_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodicTrainHistory {
    pub checkpoints: Vec<EpisodeCheckpoint>,
    /// 0 means the untrained model was never beaten.
    pub best_episode: usize,
    pub best_val_accuracy: f64,
}

fn validation_accuracy(model: &MlpModel, val_ds: &Dataset, cfg: &EpisodeConfig) -> Result<f64> {
    // A fresh stream per call, so every validation pass scores the same
    // episode set and checkpoints are comparable.
    let mut rng = RngStream::new(cfg.seed, streams::EPISODE_VAL);
    let mut correct = 0usize;
    let mut seen = 0usize;
    for _ in 0..cfg.val_episodes {
        let episode = sample_episode(val_ds, cfg, &mut rng)?;
        let protos = compute_prototypes(model, &episode)?;
        for q in &episode.queries {
            let rec = proto_predict(model, &protos, q)?;
            if rec.is_correct() {
                correct += 1;
            }
            seen += 1;
        }
    }
    Ok(correct as f64 / seen as f64)
}

/// Train the embedding episodically: one Adam step per episode on the
/// prototypical loss, validating every `val_every` episodes and at the
/// end. Returns the snapshot with the best validation accuracy (ties
/// keep the earlier one, including the untrained model at episode 0).
pub fn episodic_train(
    model: &MlpModel,
    train_ds: &Dataset,
    val_ds: &Dataset,
    cfg: &EpisodeConfig,
) -> Result<(MlpModel, EpisodicTrainHistory)> {
    cfg.validate()?;
    model.validate()?;
    if model.embedding_dim().is_none() {
        return Err(Error::InvalidModel(
            "episodic training needs a hidden layer to embed with".to_string(),
        ));
    }
    for ds in [train_ds, val_ds] {
        if ds.feature_dim != model.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: model.input_dim(),
                got: ds.feature_dim,
            });
        }
    }

    let mut current = model.clone();
    let mut adam = AdamState::new(&current);
    let mut episode_rng = RngStream::new(cfg.seed, streams::EPISODE);

    let mut best_model = current.clone();
    let mut best_acc = validation_accuracy(&current, val_ds, cfg)?;
    let mut best_episode = 0usize;
    let mut checkpoints = Vec::new();
    let mut loss_sum = 0.0;
    let mut since_checkpoint = 0usize;

    for episode_index in 1..=cfg.train_episodes {
        let episode = sample_episode(train_ds, cfg, &mut episode_rng)?;
        let (grads, loss) = episode_gradients(&current, &episode, cfg.l2_weight)?;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite loss at episode {episode_index}"
            )));
        }
        adam.step(&mut current, &grads, cfg.learning_rate);
        loss_sum += loss;
        since_checkpoint += 1;

        if episode_index % cfg.val_every == 0 || episode_index == cfg.train_episodes {
            let val_accuracy = validation_accuracy(&current, val_ds, cfg)?;
            checkpoints.push(EpisodeCheckpoint {
                episode: episode_index,
                mean_loss: loss_sum / since_checkpoint as f64,
                val_accuracy,
            });
            loss_sum = 0.0;
            since_checkpoint = 0;
            if val_accuracy > best_acc {
                best_acc = val_accuracy;
                best_model = current.clone();
                best_episode = episode_index;
            }
        }
    }

    Ok((
        best_model,
        EpisodicTrainHistory {
            checkpoints,
            best_episode,
            best_val_accuracy: best_acc,
        },
    ))
}

/// Aggregate and per-task results of episodic evaluation.
///
/// `mean` averages each metric over tasks (its `n` is the total record
/// count); `mean_uncertainty` averages the records' 1 − max p scores,
/// which is the few-shot uncertainty measure, unlike the entropy inside
/// the metric blocks.
#[derive(Debug, Clone)]
pub struct EpisodicEval {
    pub mean: MetricBlock,
    pub per_task: Vec<MetricBlock>,
    pub records: Vec<PredictionRecord>,
    pub mean_uncertainty: f64,
}

/// Evaluate over `test_episodes` tasks drawn from `ds`.
///
/// The dataset must not carry in-domain tags: support and queries both
/// come from `ds`, and scoring few-shot transfer on the distribution the
/// embedding trained on would report a transfer accuracy that isn't one.
/// Aggregate metrics need binary tasks, so `way` must be 2 here; the
/// positive class of each task is its episode-local class 1.
pub fn episodic_eval(
    model: &MlpModel,
    ds: &Dataset,
    cfg: &EpisodeConfig,
    rng: &mut RngStream,
) -> Result<EpisodicEval> {
    cfg.validate()?;
    if cfg.way != 2 {
        return Err(Error::InvalidConfig(
            "episodic evaluation aggregates binary metrics, so way must be 2".to_string(),
        ));
    }
    if let Some(s) = ds.samples.iter().find(|s| s.dist_tag.is_in_domain()) {
        return Err(Error::FslOnInDomain {
            tag: s.dist_tag.to_string(),
        });
    }

    let mut per_task = Vec::with_capacity(cfg.test_episodes);
    let mut records = Vec::new();
    for _ in 0..cfg.test_episodes {
        let episode = sample_episode(ds, cfg, rng)?;
        let protos = compute_prototypes(model, &episode)?;
        let mut task_records = Vec::with_capacity(episode.queries.len());
        for q in &episode.queries {
            task_records.push(proto_predict(model, &protos, q)?);
        }
        per_task.push(metric_block(&task_records, 1)?);
        records.extend(task_records);
    }

    let t = per_task.len() as f64;
    let mean = MetricBlock {
        accuracy: per_task.iter().map(|b| b.accuracy).sum::<f64>() / t,
        auroc: per_task.iter().map(|b| b.auroc).sum::<f64>() / t,
        aupr: per_task.iter().map(|b| b.aupr).sum::<f64>() / t,
        fpr: per_task.iter().map(|b| b.fpr).sum::<f64>() / t,
        mean_entropy: per_task.iter().map(|b| b.mean_entropy).sum::<f64>() / t,
        n: records.len(),
    };
    let mean_uncertainty =
        records.iter().map(|r| r.uncertainty).sum::<f64>() / records.len() as f64;
    Ok(EpisodicEval {
        mean,
        per_task,
        records,
        mean_uncertainty,
    })
}
