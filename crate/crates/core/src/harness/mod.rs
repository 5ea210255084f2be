//! Experiment orchestration: configuration, two-stage training, ten-crop
//! evaluation, FLOP counting, ablation grids and metrics files.

pub mod ablate;
pub mod config;
pub mod flops;
pub mod metrics;
pub mod model;
pub mod train;

pub use ablate::{ablate, AblationMatrix, AblationRow};
pub use config::ExperimentConfig;
pub use flops::{count_flops, full_size_filter_flops, FlopReport};
pub use metrics::{Accuracies, EpochRecord, FreezeReport, RunMetrics};
pub use model::{ten_crops, Model, Prediction, Sample};
pub use train::{
    evaluate, load_dataset, run_experiment, stage2_gradient_probe, train_two_stage, Dataset,
    TrainOutcome,
};
