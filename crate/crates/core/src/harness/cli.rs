//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on a usage error, 2 on a runtime
//! failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::datamodel::{load_dataset, load_logits, write_dataset, Dataset, DistributionTag};
use crate::error::{Error, Result};
use crate::metrics::metric_block;
use crate::nets::{load_model, save_model};
use crate::shiftgen::gen_suite;
use crate::uq::load_ensemble;

use super::config::{load_config, save_config, ExperimentConfig};
use super::experiment::{
    eval_baseline, eval_ensemble, eval_fsl, eval_mc, load_report, mc_predict_config,
    run_experiment, train_baseline_model, train_ensemble_models, train_fsl_model, train_mc_model,
    METHODS,
};
use super::report::{render_report, REPORT_STYLES};

#[derive(Parser, Debug)]
#[command(
    name = "shiftbench",
    version,
    about = "Train and compare predictive-uncertainty methods under synthetic distribution shift"
)]
struct Cli {
    /// Experiment config file (TOML); defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the config's master seed.
    #[arg(long, global = true, value_name = "SEED")]
    seed: Option<u64>,

    /// Run directory for all artifacts.
    #[arg(long, global = true, default_value = "run", value_name = "DIR")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the shift-scenario datasets.
    Gen,
    /// Train one method and save its model under the run directory.
    Train {
        /// baseline | mc_dropout | ensemble | fsl
        method: String,
    },
    /// Evaluate one trained method on one generated dataset.
    Eval {
        /// baseline | mc_dropout | ensemble | fsl
        method: String,
        /// Evaluation distribution (e.g. in_test, ext_prot, ood_cxr).
        #[arg(long, value_name = "TAG")]
        dataset: String,
    },
    /// Run the whole grid: generate, train, evaluate, detect, report.
    Run,
    /// Compute the metric block for an externally produced logits file.
    ScoreLogits {
        /// JSON-lines file with {"logits" | "probs", "label"} records.
        path: PathBuf,
        /// Class count of the records.
        #[arg(long, default_value_t = 2)]
        classes: usize,
    },
    /// Render one report table from a finished run.
    Report {
        /// table2 | table3 | table4 | table5
        #[arg(long)]
        style: String,
    },
}

/// Parse `argv` and run. Returns the process exit code.
pub fn cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Cli::try_parse_from(argv) {
        Ok(args) => args,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{e}");
                    1
                }
            };
        }
    };
    match dispatch(&args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn effective_config(args: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn unknown_method(method: &str) -> Error {
    Error::InvalidConfig(format!(
        "unknown method {method}; expected one of {}",
        METHODS.join(", ")
    ))
}

/// The in-domain training pool split into fit and validation parts.
fn training_split(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let suite = gen_suite(&cfg.suite, cfg.master_seed)?;
    let in_train = &suite[&DistributionTag::InTrain];
    let mut parts = crate::datamodel::split_dataset(
        in_train,
        &[1.0 - cfg.val_fraction, cfg.val_fraction],
        cfg.master_seed,
    )?;
    let val = parts.pop().expect("two partitions");
    let train = parts.pop().expect("two partitions");
    Ok((train, val))
}

fn eval_tag(name: &str) -> Result<(usize, DistributionTag)> {
    let tags = DistributionTag::eval_tags();
    match tags.iter().position(|t| t.as_str() == name) {
        Some(i) => Ok((i, tags[i].clone())),
        None => {
            let names: Vec<String> = tags.iter().map(|t| t.as_str().to_string()).collect();
            Err(Error::InvalidConfig(format!(
                "unknown evaluation dataset {name}; expected one of {}",
                names.join(", ")
            )))
        }
    }
}

fn print_block(value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::ReportFile {
        path: PathBuf::from("<stdout>"),
        message: e.to_string(),
    })?;
    println!("{text}");
    Ok(())
}

fn dispatch(args: &Cli) -> Result<()> {
    match &args.command {
        Command::Gen => {
            let cfg = effective_config(args)?;
            let suite = gen_suite(&cfg.suite, cfg.master_seed)?;
            let dir = args.out.join("datasets");
            ensure_dir(&dir)?;
            for (tag, ds) in &suite {
                let path = dir.join(format!("{}.jsonl", tag.as_str()));
                write_dataset(ds, &path)?;
                println!("wrote {} ({} samples)", path.display(), ds.samples.len());
            }
            ensure_dir(&args.out)?;
            save_config(&cfg, &args.out.join("config.toml"))
        }
        Command::Train { method } => {
            let cfg = effective_config(args)?;
            let (train_ds, val_ds) = training_split(&cfg)?;
            let model_dir = args.out.join("models");
            ensure_dir(&model_dir)?;
            let best = match method.as_str() {
                "baseline" => {
                    let (model, hist) = train_baseline_model(&cfg, &train_ds, &val_ds)?;
                    save_model(&model, &model_dir.join("baseline.model"))?;
                    hist.best_val_accuracy
                }
                "mc_dropout" => {
                    let (model, hist) = train_mc_model(&cfg, &train_ds, &val_ds)?;
                    save_model(&model, &model_dir.join("mc_dropout.model"))?;
                    hist.best_val_accuracy
                }
                "ensemble" => {
                    let (ens, hists) = train_ensemble_models(&cfg, &train_ds, &val_ds)?;
                    crate::uq::save_ensemble(&ens, &model_dir.join("ensemble"))?;
                    hists
                        .iter()
                        .map(|h| h.best_val_accuracy)
                        .fold(0.0, f64::max)
                }
                "fsl" => {
                    let (model, hist) = train_fsl_model(&cfg, &train_ds, &val_ds)?;
                    save_model(&model, &model_dir.join("fsl.model"))?;
                    hist.best_val_accuracy
                }
                other => return Err(unknown_method(other)),
            };
            println!("{method}: best validation accuracy {best:.4}");
            Ok(())
        }
        Command::Eval { method, dataset } => {
            let cfg = effective_config(args)?;
            let (tag_index, _) = eval_tag(dataset)?;
            let ds_path = args.out.join("datasets").join(format!("{dataset}.jsonl"));
            let ds = load_dataset(&ds_path, None, Some(2))?;
            let model_dir = args.out.join("models");
            let (block, records) = match method.as_str() {
                "baseline" => {
                    let model = load_model(&model_dir.join("baseline.model"))?;
                    let records = eval_baseline(&model, &ds)?;
                    (metric_block(&records, cfg.positive_class)?, records)
                }
                "mc_dropout" => {
                    let model = load_model(&model_dir.join("mc_dropout.model"))?;
                    let records = eval_mc(&model, &ds, &mc_predict_config(&cfg))?;
                    (metric_block(&records, cfg.positive_class)?, records)
                }
                "ensemble" => {
                    let ens = load_ensemble(&model_dir.join("ensemble"))?;
                    let records = eval_ensemble(&ens, &ds)?;
                    (metric_block(&records, cfg.positive_class)?, records)
                }
                "fsl" => {
                    let model = load_model(&model_dir.join("fsl.model"))?;
                    let (block, records, _) = eval_fsl(&model, &ds, &cfg, tag_index as u64)?;
                    (block, records)
                }
                other => return Err(unknown_method(other)),
            };
            let record_dir = args.out.join("records");
            ensure_dir(&record_dir)?;
            let record_path = record_dir.join(format!("{method}.{dataset}.jsonl"));
            let mut text = String::new();
            for r in &records {
                text.push_str(&serde_json::to_string(r).map_err(|e| Error::ReportFile {
                    path: record_path.clone(),
                    message: e.to_string(),
                })?);
                text.push('\n');
            }
            fs::write(&record_path, text).map_err(|e| Error::io(&record_path, e))?;
            print_block(&block)
        }
        Command::Run => {
            let cfg = effective_config(args)?;
            run_experiment(&cfg, &args.out)?;
            println!("report written to {}", args.out.join("report.json").display());
            for style in REPORT_STYLES {
                println!(
                    "table written to {}",
                    args.out.join("tables").join(format!("{style}.txt")).display()
                );
            }
            Ok(())
        }
        Command::ScoreLogits { path, classes } => {
            let cfg = effective_config(args)?;
            let records = load_logits(path, *classes)?;
            let block = metric_block(&records, cfg.positive_class)?;
            print_block(&block)
        }
        Command::Report { style } => {
            let report = load_report(&args.out.join("report.json"))?;
            let table_dir = args.out.join("tables");
            ensure_dir(&table_dir)?;
            let path = table_dir.join(format!("{style}.txt"));
            render_report(&report, style, &path)?;
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            print!("{text}");
            Ok(())
        }
    }
}
