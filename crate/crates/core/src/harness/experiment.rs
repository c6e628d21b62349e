//! One end-to-end experiment: generate the scenario suite, train every
//! method on the in-domain training split, evaluate the full
//! method-by-scenario grid, score shift detection, and persist all
//! artifacts under a run directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::datamodel::{split_dataset, write_dataset, Dataset, DistributionTag, PredictionRecord};
use crate::error::{Error, Result};
use crate::metrics::{aupr, auroc, fpr_at_tpr, metric_block, MetricBlock, ScoredSample};
use crate::nets::{init_model, save_model, train, MlpModel, TrainHistory};
use crate::rng::{streams, RngStream};
use crate::shiftgen::gen_suite;
use crate::uq::{
    baseline_predict, ensemble_predict, ensemble_train, episodic_eval, episodic_train,
    mc_dropout_predict, save_ensemble, EnsembleMemberConfig, EnsembleModel, EpisodeConfig,
    EpisodicTrainHistory, McDropoutConfig,
};

use super::config::{config_hash, save_config, ExperimentConfig, ModelSpec};

/// Method names in report order.
pub const METHODS: [&str; 4] = ["baseline", "mc_dropout", "ensemble", "fsl"];

/// Per-stage seed salts. Each stage derives its own child seed from the
/// master seed so that adding or removing one stage never perturbs the
/// randomness of another.
pub mod stage_salts {
    pub const BASELINE: u64 = 10;
    pub const MC_DROPOUT: u64 = 11;
    /// Member i uses `ENSEMBLE_BASE + i`.
    pub const ENSEMBLE_BASE: u64 = 20;
    pub const FSL_INIT: u64 = 30;
    pub const FSL_EPISODES: u64 = 31;
    pub const MC_PREDICT: u64 = 40;
    /// Evaluation tag at index i uses `FSL_EVAL_BASE + i`.
    pub const FSL_EVAL_BASE: u64 = 50;
}

/// Run identity stored inside the report. Deliberately excludes
/// wall-clock data so a rerun with the same config reproduces the report
/// byte for byte; timestamps live in `run_meta.json` instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config_hash: String,
    pub master_seed: u64,
}

/// Shift-detection scores for one method on one scenario: the method's
/// per-sample uncertainty is the detection score and membership in the
/// shifted subset is the positive label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionBlock {
    pub auroc: f64,
    pub aupr: f64,
    pub fpr: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

/// Full result grid of a run.
///
/// `blocks`: method name -> distribution tag -> classification metrics.
/// The few-shot method has no `in_test` entry because it refuses
/// in-domain evaluation. Its blocks average metrics over test tasks;
/// with the persisted records laid out in task order, each task being
/// `way * queries_per_class` consecutive rows, the averages are
/// recomputable from the record files.
///
/// `detection`: method name -> shifted tag -> detection scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub blocks: BTreeMap<String, BTreeMap<String, MetricBlock>>,
    pub detection: BTreeMap<String, BTreeMap<String, DetectionBlock>>,
    pub meta: RunMeta,
}

impl EvalReport {
    pub fn block(&self, method: &str, dist: &str) -> Result<&MetricBlock> {
        self.blocks
            .get(method)
            .and_then(|tags| tags.get(dist))
            .ok_or_else(|| Error::MissingReportEntry {
                method: method.to_string(),
                dist: dist.to_string(),
            })
    }

    pub fn detection_entry(&self, method: &str, dist: &str) -> Result<&DetectionBlock> {
        self.detection
            .get(method)
            .and_then(|tags| tags.get(dist))
            .ok_or_else(|| Error::MissingReportEntry {
                method: method.to_string(),
                dist: dist.to_string(),
            })
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::ReportFile {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::ReportFile {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Read back a report written by [`run_experiment`].
pub fn load_report(path: &Path) -> Result<EvalReport> {
    read_json(path)
}

fn write_records(records: &[PredictionRecord], path: &Path) -> Result<()> {
    let mut text = String::new();
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::ReportFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        text.push_str(&line);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Rows of a shifted set that count as positives for detection.
///
/// The subtype and novel-condition scenarios displace only the disease
/// class; their class-0 rows are draws from the unshifted normal
/// process, so treating them as positives would poison the ground
/// truth. The modality scenario warps every row, so all rows count.
/// Works on few-shot records too: in a two-class suite the episode's
/// local labels coincide with the original ones.
fn detection_positives<'a>(
    records: &'a [PredictionRecord],
    tag: &DistributionTag,
) -> Vec<&'a PredictionRecord> {
    if *tag == DistributionTag::OodCxr {
        records.iter().collect()
    } else {
        records.iter().filter(|r| r.true_label == 1).collect()
    }
}

/// Score shift detection for one method: in-distribution records as
/// negatives, the shifted subset as positives, per-sample uncertainty
/// as the score.
pub fn detection_block(
    id_records: &[PredictionRecord],
    shifted_records: &[PredictionRecord],
    shifted_tag: &DistributionTag,
) -> Result<DetectionBlock> {
    let positives = detection_positives(shifted_records, shifted_tag);
    if positives.is_empty() {
        return Err(Error::NoPositives);
    }
    let mut scored = Vec::with_capacity(id_records.len() + positives.len());
    for r in id_records {
        scored.push(ScoredSample {
            score: r.uncertainty,
            positive: false,
        });
    }
    for r in &positives {
        scored.push(ScoredSample {
            score: r.uncertainty,
            positive: true,
        });
    }
    Ok(DetectionBlock {
        auroc: auroc(&scored)?,
        aupr: aupr(&scored)?,
        fpr: fpr_at_tpr(&scored, 0.95)?,
        n_id: id_records.len(),
        n_ood: positives.len(),
    })
}

/// Detection scores for every method on one shifted scenario.
///
/// `records` maps method name -> tag string -> that method's records.
/// The few-shot method has no in-domain records, so when `id_tag` is
/// in-domain its reference set is the covariate-shift scenario, the
/// nearest distribution it can be evaluated on.
pub fn ood_detection_eval(
    records: &BTreeMap<String, BTreeMap<String, Vec<PredictionRecord>>>,
    id_tag: &DistributionTag,
    shifted_tag: &DistributionTag,
) -> Result<BTreeMap<String, DetectionBlock>> {
    let mut out = BTreeMap::new();
    for (method, tags) in records {
        let effective_id = if method == "fsl" && id_tag.is_in_domain() {
            DistributionTag::ExtProt
        } else {
            id_tag.clone()
        };
        let id_records = tags
            .get(effective_id.as_str())
            .ok_or_else(|| Error::MissingReportEntry {
                method: method.clone(),
                dist: effective_id.as_str().to_string(),
            })?;
        let shifted_records =
            tags.get(shifted_tag.as_str())
                .ok_or_else(|| Error::MissingReportEntry {
                    method: method.clone(),
                    dist: shifted_tag.as_str().to_string(),
                })?;
        out.insert(
            method.clone(),
            detection_block(id_records, shifted_records, shifted_tag)?,
        );
    }
    Ok(out)
}

/// Train one deterministic-architecture classifier from a model spec,
/// with initialization and shuffling seeded from `seed`.
fn train_spec(
    spec: &ModelSpec,
    train_ds: &Dataset,
    val_ds: &Dataset,
    seed: u64,
) -> Result<(MlpModel, TrainHistory)> {
    let dims = spec.layer_dims(train_ds.feature_dim, train_ds.class_count);
    let init = init_model(&dims, &spec.dropout_rates, seed)?;
    let mut tc = spec.train.clone();
    tc.seed = seed;
    train(&init, train_ds, val_ds, &tc)
}

pub fn train_baseline_model(
    cfg: &ExperimentConfig,
    train_ds: &Dataset,
    val_ds: &Dataset,
) -> Result<(MlpModel, TrainHistory)> {
    let seed = cfg.stage_seed(streams::TRAIN, stage_salts::BASELINE);
    train_spec(&cfg.baseline, train_ds, val_ds, seed)
}

pub fn train_mc_model(
    cfg: &ExperimentConfig,
    train_ds: &Dataset,
    val_ds: &Dataset,
) -> Result<(MlpModel, TrainHistory)> {
    let seed = cfg.stage_seed(streams::TRAIN, stage_salts::MC_DROPOUT);
    train_spec(&cfg.mc_dropout, train_ds, val_ds, seed)
}

pub fn train_ensemble_models(
    cfg: &ExperimentConfig,
    train_ds: &Dataset,
    val_ds: &Dataset,
) -> Result<(EnsembleModel, Vec<TrainHistory>)> {
    let member_cfgs: Vec<EnsembleMemberConfig> = cfg
        .ensemble
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let seed = cfg.stage_seed(streams::TRAIN, stage_salts::ENSEMBLE_BASE + i as u64);
            let mut tc = spec.train.clone();
            tc.seed = seed;
            EnsembleMemberConfig {
                layer_dims: spec.layer_dims(train_ds.feature_dim, train_ds.class_count),
                dropout_rates: spec.dropout_rates.clone(),
                train: tc,
            }
        })
        .collect();
    ensemble_train(&member_cfgs, train_ds, val_ds)
}

/// Episode config with the run's derived seed written in.
pub fn episode_config(cfg: &ExperimentConfig) -> EpisodeConfig {
    let mut ec = cfg.episodes;
    ec.seed = cfg.stage_seed(streams::EPISODE, stage_salts::FSL_EPISODES);
    ec
}

pub fn train_fsl_model(
    cfg: &ExperimentConfig,
    train_ds: &Dataset,
    val_ds: &Dataset,
) -> Result<(MlpModel, EpisodicTrainHistory)> {
    let mut dims = Vec::with_capacity(cfg.fsl_hidden_dims.len() + 2);
    dims.push(train_ds.feature_dim);
    dims.extend_from_slice(&cfg.fsl_hidden_dims);
    dims.push(train_ds.class_count);
    let init_seed = cfg.stage_seed(streams::INIT, stage_salts::FSL_INIT);
    let init = init_model(&dims, &cfg.fsl_dropout_rates, init_seed)?;
    episodic_train(&init, train_ds, val_ds, &episode_config(cfg))
}

/// Prediction-time dropout config with the run's derived seed.
pub fn mc_predict_config(cfg: &ExperimentConfig) -> McDropoutConfig {
    McDropoutConfig {
        passes: cfg.mc_passes,
        seed: cfg.stage_seed(streams::DROPOUT_BASE, stage_salts::MC_PREDICT),
    }
}

pub fn eval_baseline(model: &MlpModel, ds: &Dataset) -> Result<Vec<PredictionRecord>> {
    ds.samples
        .iter()
        .map(|s| baseline_predict(model, s))
        .collect()
}

pub fn eval_mc(
    model: &MlpModel,
    ds: &Dataset,
    mc_cfg: &McDropoutConfig,
) -> Result<Vec<PredictionRecord>> {
    ds.samples
        .iter()
        .map(|s| mc_dropout_predict(model, s, mc_cfg))
        .collect()
}

pub fn eval_ensemble(ens: &EnsembleModel, ds: &Dataset) -> Result<Vec<PredictionRecord>> {
    ds.samples
        .iter()
        .map(|s| ensemble_predict(ens, s))
        .collect()
}

/// Episodic evaluation of the few-shot model on one scenario, seeded per
/// tag so every scenario draws its own task sequence.
pub fn eval_fsl(
    model: &MlpModel,
    ds: &Dataset,
    cfg: &ExperimentConfig,
    tag_index: u64,
) -> Result<(MetricBlock, Vec<PredictionRecord>, f64)> {
    let seed = cfg.stage_seed(streams::EPISODE_TEST, stage_salts::FSL_EVAL_BASE + tag_index);
    let mut rng = RngStream::new(seed, streams::EPISODE_TEST);
    let eval = episodic_eval(model, ds, &episode_config(cfg), &mut rng)?;
    Ok((eval.mean, eval.records, eval.mean_uncertainty))
}

fn now_unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Wall-clock bookkeeping for a run, kept out of the report so reruns
/// stay byte-identical.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct WallClock {
    started_unix_ms: u64,
    finished_unix_ms: u64,
}

/// Flat report line for machine consumption.
#[derive(Serialize)]
struct ReportLine<'a> {
    method: &'a str,
    dist: &'a str,
    metric: &'a str,
    value: f64,
}

fn write_report_lines(report: &EvalReport, path: &Path) -> Result<()> {
    let mut text = String::new();
    let mut push = |line: &ReportLine| -> Result<()> {
        let s = serde_json::to_string(line).map_err(|e| Error::ReportFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        text.push_str(&s);
        text.push('\n');
        Ok(())
    };
    for (method, tags) in &report.blocks {
        for (dist, b) in tags {
            for (metric, value) in [
                ("accuracy", b.accuracy),
                ("auroc", b.auroc),
                ("aupr", b.aupr),
                ("fpr95", b.fpr),
                ("mean_entropy", b.mean_entropy),
                ("n", b.n as f64),
            ] {
                push(&ReportLine {
                    method,
                    dist,
                    metric,
                    value,
                })?;
            }
        }
    }
    for (method, tags) in &report.detection {
        for (dist, d) in tags {
            for (metric, value) in [
                ("detect_auroc", d.auroc),
                ("detect_aupr", d.aupr),
                ("detect_fpr95", d.fpr),
            ] {
                push(&ReportLine {
                    method,
                    dist,
                    metric,
                    value,
                })?;
            }
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Run the whole experiment and persist every artifact under `out_dir`:
/// the effective config, the generated datasets, the trained models,
/// per-sample prediction records, the report in JSON and flat-line form,
/// and the rendered tables. Any failure aborts with the stage name
/// attached; artifacts from completed stages stay on disk.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<EvalReport> {
    cfg.validate()?;
    let started = now_unix_ms();
    ensure_dir(out_dir)?;
    save_config(cfg, &out_dir.join("config.toml"))?;

    let stage = Error::in_stage;

    log::info!("generating scenario suite");
    let suite = gen_suite(&cfg.suite, cfg.master_seed).map_err(|e| stage("generate", e))?;
    let dataset_dir = out_dir.join("datasets");
    ensure_dir(&dataset_dir)?;
    for (tag, ds) in &suite {
        write_dataset(ds, &dataset_dir.join(format!("{}.jsonl", tag.as_str())))
            .map_err(|e| stage("generate", e))?;
    }

    let in_train = &suite[&DistributionTag::InTrain];
    let parts = split_dataset(
        in_train,
        &[1.0 - cfg.val_fraction, cfg.val_fraction],
        cfg.master_seed,
    )
    .map_err(|e| stage("split", e))?;
    let (train_ds, val_ds) = (&parts[0], &parts[1]);

    let model_dir = out_dir.join("models");
    ensure_dir(&model_dir)?;

    log::info!("training baseline");
    let (baseline_model, baseline_hist) =
        train_baseline_model(cfg, train_ds, val_ds).map_err(|e| stage("train-baseline", e))?;
    save_model(&baseline_model, &model_dir.join("baseline.model"))
        .map_err(|e| stage("train-baseline", e))?;
    write_json(&baseline_hist, &model_dir.join("baseline.history.json"))
        .map_err(|e| stage("train-baseline", e))?;

    log::info!("training dropout network");
    let (mc_model, mc_hist) =
        train_mc_model(cfg, train_ds, val_ds).map_err(|e| stage("train-mc_dropout", e))?;
    save_model(&mc_model, &model_dir.join("mc_dropout.model"))
        .map_err(|e| stage("train-mc_dropout", e))?;
    write_json(&mc_hist, &model_dir.join("mc_dropout.history.json"))
        .map_err(|e| stage("train-mc_dropout", e))?;

    log::info!("training ensemble ({} members)", cfg.ensemble.len());
    let (ensemble_model, ensemble_hists) =
        train_ensemble_models(cfg, train_ds, val_ds).map_err(|e| stage("train-ensemble", e))?;
    save_ensemble(&ensemble_model, &model_dir.join("ensemble"))
        .map_err(|e| stage("train-ensemble", e))?;
    write_json(&ensemble_hists, &model_dir.join("ensemble.history.json"))
        .map_err(|e| stage("train-ensemble", e))?;

    log::info!("training few-shot embedding");
    let (fsl_model, fsl_hist) =
        train_fsl_model(cfg, train_ds, val_ds).map_err(|e| stage("train-fsl", e))?;
    save_model(&fsl_model, &model_dir.join("fsl.model")).map_err(|e| stage("train-fsl", e))?;
    write_json(&fsl_hist, &model_dir.join("fsl.history.json"))
        .map_err(|e| stage("train-fsl", e))?;

    log::info!("evaluating the grid");
    let record_dir = out_dir.join("records");
    ensure_dir(&record_dir)?;
    let mc_cfg = mc_predict_config(cfg);
    let mut blocks: BTreeMap<String, BTreeMap<String, MetricBlock>> = BTreeMap::new();
    let mut records: BTreeMap<String, BTreeMap<String, Vec<PredictionRecord>>> = BTreeMap::new();
    for method in METHODS {
        blocks.insert(method.to_string(), BTreeMap::new());
        records.insert(method.to_string(), BTreeMap::new());
    }
    for (tag_index, tag) in DistributionTag::eval_tags().iter().enumerate() {
        let ds = &suite[tag];
        let tag_name = tag.as_str().to_string();
        for method in METHODS {
            let outcome: Option<(MetricBlock, Vec<PredictionRecord>)> = match method {
                "baseline" => {
                    let recs = eval_baseline(&baseline_model, ds)
                        .map_err(|e| stage("evaluate", e))?;
                    let block = metric_block(&recs, cfg.positive_class)
                        .map_err(|e| stage("evaluate", e))?;
                    Some((block, recs))
                }
                "mc_dropout" => {
                    let recs =
                        eval_mc(&mc_model, ds, &mc_cfg).map_err(|e| stage("evaluate", e))?;
                    let block = metric_block(&recs, cfg.positive_class)
                        .map_err(|e| stage("evaluate", e))?;
                    Some((block, recs))
                }
                "ensemble" => {
                    let recs =
                        eval_ensemble(&ensemble_model, ds).map_err(|e| stage("evaluate", e))?;
                    let block = metric_block(&recs, cfg.positive_class)
                        .map_err(|e| stage("evaluate", e))?;
                    Some((block, recs))
                }
                "fsl" => {
                    if tag.is_in_domain() {
                        None
                    } else {
                        let (block, recs, _) = eval_fsl(&fsl_model, ds, cfg, tag_index as u64)
                            .map_err(|e| stage("evaluate", e))?;
                        Some((block, recs))
                    }
                }
                _ => unreachable!("METHODS is exhaustive"),
            };
            if let Some((block, recs)) = outcome {
                write_records(&recs, &record_dir.join(format!("{method}.{tag_name}.jsonl")))
                    .map_err(|e| stage("evaluate", e))?;
                blocks.get_mut(method).unwrap().insert(tag_name.clone(), block);
                records.get_mut(method).unwrap().insert(tag_name.clone(), recs);
            }
        }
    }

    log::info!("scoring shift detection");
    let mut detection: BTreeMap<String, BTreeMap<String, DetectionBlock>> = BTreeMap::new();
    for method in METHODS {
        detection.insert(method.to_string(), BTreeMap::new());
    }
    for shifted_tag in [
        DistributionTag::Ext5ad,
        DistributionTag::OodScc,
        DistributionTag::OodCad,
        DistributionTag::OodCxr,
    ] {
        let per_method = ood_detection_eval(&records, &DistributionTag::InTest, &shifted_tag)
            .map_err(|e| stage("detect", e))?;
        for (method, block) in per_method {
            detection
                .get_mut(&method)
                .unwrap()
                .insert(shifted_tag.as_str().to_string(), block);
        }
    }

    let report = EvalReport {
        blocks,
        detection,
        meta: RunMeta {
            config_hash: config_hash(cfg)?,
            master_seed: cfg.master_seed,
        },
    };
    write_json(&report, &out_dir.join("report.json")).map_err(|e| stage("report", e))?;
    write_report_lines(&report, &out_dir.join("report.jsonl")).map_err(|e| stage("report", e))?;

    let table_dir = out_dir.join("tables");
    ensure_dir(&table_dir)?;
    for style in super::report::REPORT_STYLES {
        super::report::render_report(&report, style, &table_dir.join(format!("{style}.txt")))
            .map_err(|e| stage("report", e))?;
    }

    write_json(
        &WallClock {
            started_unix_ms: started,
            finished_unix_ms: now_unix_ms(),
        },
        &out_dir.join("run_meta.json"),
    )?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::ProbabilityVector;
    use crate::metrics::shannon_entropy;

    fn record(p1: f64, true_label: usize) -> PredictionRecord {
        let probs = ProbabilityVector::new(vec![1.0 - p1, p1]).unwrap();
        let uncertainty = shannon_entropy(probs.as_slice()).unwrap();
        PredictionRecord {
            probs,
            true_label,
            uncertainty,
            method: "test".to_string(),
        }
    }

    #[test]
    fn detection_block_on_separated_scores() {
        let id: Vec<PredictionRecord> = (0..5).map(|_| record(0.99, 1)).collect();
        let shifted: Vec<PredictionRecord> = (0..5).map(|_| record(0.55, 1)).collect();
        let block = detection_block(&id, &shifted, &DistributionTag::OodScc).unwrap();
        assert_eq!(block.auroc, 1.0);
        assert_eq!(block.aupr, 1.0);
        assert_eq!(block.fpr, 0.0);
        assert_eq!(block.n_id, 5);
        assert_eq!(block.n_ood, 5);
    }

    #[test]
    fn detection_counts_only_displaced_class_except_modality() {
        let shifted: Vec<PredictionRecord> =
            vec![record(0.6, 0), record(0.6, 1), record(0.6, 1)];
        let id: Vec<PredictionRecord> = vec![record(0.99, 1), record(0.01, 0)];

        let scc = detection_block(&id, &shifted, &DistributionTag::OodScc).unwrap();
        assert_eq!(scc.n_ood, 2);

        let cxr = detection_block(&id, &shifted, &DistributionTag::OodCxr).unwrap();
        assert_eq!(cxr.n_ood, 3);
    }

    #[test]
    fn detection_with_no_positive_rows_is_an_error() {
        let id = vec![record(0.99, 1)];
        let shifted = vec![record(0.6, 0)];
        match detection_block(&id, &shifted, &DistributionTag::OodScc) {
            Err(Error::NoPositives) => {}
            other => panic!("expected NoPositives, got {other:?}"),
        }
    }

    fn records_map(
        entries: &[(&str, &str, Vec<PredictionRecord>)],
    ) -> BTreeMap<String, BTreeMap<String, Vec<PredictionRecord>>> {
        let mut map: BTreeMap<String, BTreeMap<String, Vec<PredictionRecord>>> = BTreeMap::new();
        for (method, tag, recs) in entries {
            map.entry(method.to_string())
                .or_default()
                .insert(tag.to_string(), recs.clone());
        }
        map
    }

    #[test]
    fn fsl_detection_reference_is_the_covariate_scenario() {
        let id: Vec<PredictionRecord> = (0..4).map(|_| record(0.95, 1)).collect();
        let shifted: Vec<PredictionRecord> = (0..4).map(|_| record(0.6, 1)).collect();
        let map = records_map(&[
            ("fsl", "ext_prot", id),
            ("fsl", "ood_scc", shifted),
        ]);
        let out =
            ood_detection_eval(&map, &DistributionTag::InTest, &DistributionTag::OodScc).unwrap();
        assert_eq!(out["fsl"].n_id, 4);
        assert_eq!(out["fsl"].auroc, 1.0);
    }

    #[test]
    fn detection_eval_reports_missing_entries() {
        let map = records_map(&[("baseline", "ood_scc", vec![record(0.6, 1)])]);
        match ood_detection_eval(&map, &DistributionTag::InTest, &DistributionTag::OodScc) {
            Err(Error::MissingReportEntry { method, dist }) => {
                assert_eq!(method, "baseline");
                assert_eq!(dist, "in_test");
            }
            other => panic!("expected MissingReportEntry, got {other:?}"),
        }
    }

    fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.suite.base.n_train_per_class = 60;
        cfg.suite.base.n_test_per_class = 10;
        cfg.suite.base.n_eval_per_class = 12;
        cfg.baseline.train.epochs = 3;
        cfg.mc_dropout.train.epochs = 3;
        cfg.ensemble.truncate(2);
        for spec in &mut cfg.ensemble {
            spec.train.epochs = 3;
        }
        cfg.mc_passes = 5;
        cfg.episodes.shot = 3;
        cfg.episodes.queries_per_class = 3;
        cfg.episodes.train_episodes = 20;
        cfg.episodes.val_every = 10;
        cfg.episodes.val_episodes = 3;
        cfg.episodes.test_episodes = 3;
        cfg
    }

    #[test]
    fn tiny_run_fills_the_whole_grid() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let cfg = tiny_config();
        let report = run_experiment(&cfg, &out).unwrap();

        for method in ["baseline", "mc_dropout", "ensemble"] {
            assert_eq!(report.blocks[method].len(), 6, "{method} grid row");
        }
        assert_eq!(report.blocks["fsl"].len(), 5);
        assert!(report.block("fsl", "in_test").is_err());
        for method in METHODS {
            assert_eq!(report.detection[method].len(), 4, "{method} detection row");
            for block in report.detection[method].values() {
                assert!(block.auroc.is_finite());
            }
            for block in report.blocks[method].values() {
                assert!(block.accuracy.is_finite());
                assert!(block.mean_entropy.is_finite());
            }
        }
        assert_eq!(report.meta.config_hash.len(), 64);

        for file in [
            "config.toml",
            "report.json",
            "report.jsonl",
            "run_meta.json",
            "datasets/in_train.jsonl",
            "datasets/ood_cxr.jsonl",
            "models/baseline.model",
            "models/fsl.model",
            "models/ensemble/manifest.json",
            "records/baseline.in_test.jsonl",
            "records/fsl.ood_cxr.jsonl",
            "tables/table2.txt",
            "tables/table5.jsonl",
        ] {
            assert!(out.join(file).exists(), "missing {file}");
        }
        assert!(!out.join("records/fsl.in_test.jsonl").exists());
    }

    #[test]
    fn rerun_is_byte_identical_outside_wall_clock() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        let cfg = tiny_config();
        run_experiment(&cfg, &a).unwrap();
        run_experiment(&cfg, &b).unwrap();
        for file in [
            "config.toml",
            "report.json",
            "report.jsonl",
            "datasets/ood_scc.jsonl",
            "records/mc_dropout.ood_cxr.jsonl",
            "records/fsl.ext_prot.jsonl",
            "models/baseline.model",
            "tables/table2.txt",
        ] {
            let left = fs::read(a.join(file)).unwrap();
            let right = fs::read(b.join(file)).unwrap();
            assert_eq!(left, right, "{file} differs between reruns");
        }
    }

    #[test]
    fn report_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let report = run_experiment(&tiny_config(), &out).unwrap();
        let back = load_report(&out.join("report.json")).unwrap();
        assert_eq!(back, report);
    }
}
