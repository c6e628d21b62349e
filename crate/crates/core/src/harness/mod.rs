//! Experiment harness: configuration, the train/evaluate grid over all
//! methods and shift scenarios, shift-detection scoring, report tables,
//! and the command-line front end.

pub mod cli;
pub mod config;
pub mod experiment;
pub mod report;

pub use cli::cli;
pub use config::{
    config_hash, load_config, save_config, ExperimentConfig, ModelSpec, CONFIG_VERSION,
};
pub use experiment::{
    detection_block, load_report, ood_detection_eval, run_experiment, DetectionBlock, EvalReport,
    RunMeta, METHODS,
};
pub use report::{render_report, REPORT_STYLES};
