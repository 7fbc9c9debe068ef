//! Training, evaluation, threshold tuning, ablation suites and the CLI.

pub mod ablation;
pub mod cli;
mod config;
pub mod metrics;
mod run;

pub use ablation::{ablate_bias_terms, ablate_dependencies, ablate_layers, AblationRow, Corpora};
pub use config::ModelConfig;
pub use metrics::{f1_score, score_facts, EvalReport, FactKey, TrainFactIndex};
pub use run::{
    evaluate_scores, save_outcome, train, tune_from_scores, tune_threshold, EpochLog, TrainOutcome, Trained,
    CHECKPOINT_FILE, CONFIG_FILE, LOG_FILE, SCHEMA_FILE, VOCAB_FILE,
};
