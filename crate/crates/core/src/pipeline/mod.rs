//! Dataset generation, pseudo-labeling, distillation and evaluation as
//! cached, hash-keyed stages.

mod cache;
mod config;
mod experiment;
mod ops;
mod progress;

pub use cache::{
    checksum_dir, default_cache_dir, sha256_hex, stage_hash, StageCache, StageOutput, StageRecord,
    CACHE_ENV, DEFAULT_CACHE_DIR,
};
pub use config::{
    read_config, read_experiment, write_config, Arm, BenchConfig, Diversity, ExperimentConfig,
    Seeds, CONFIG_VERSION,
};
pub use experiment::{
    compare_methods, config_hash, run_experiment, run_scaling, ExperimentResult, Manifest,
    RunOptions, ScalingResult, StageEntry, EPOCH_LOG_FILE, MANIFEST_FILE, MODEL_FILE, REPORT_FILE,
};
pub use ops::{
    check_label_failures, check_model_matches, default_labels_dir, evaluate_labels, evaluate_model,
    evaluate_zero_flow, failure_limit, generate_dataset, label_split, labeled_indices,
    load_split_for, load_training_pairs, train_on_pairs, TRAIN_SPLIT, VAL_SPLIT,
};
pub use progress::{Progress, StageProgress};
