//! Experiment engine: declarative configs, a stand-in detector, the
//! per-sample pipeline, seeded repetitions and ablation grids.

pub mod ablation;
pub mod config;
pub mod detect;
pub mod experiment;
pub mod pipeline;

pub use ablation::{ablation_configs, ablation_grid, ablation_grid_with, AblationConfig, AblationResult, AblationRow, Axis};
pub use config::{
    apply_override, parse_override_value, AugmentationConfig, DatasetConfig, DetectorConfig, ExperimentConfig,
    FeatureFusionSpec, FusionConfig, FusionMode, MetricsConfig, ParamInit, Phase, PixelFusionSpec, RegistrationMode,
    RegistrationStage,
};
pub use detect::{baseline_detect, label_components, score_map, BaselineDetectorConfig};
pub use experiment::{
    run_experiment, run_experiment_with, run_trial, trial_samples, with_threads, Aggregate, Report, RunOptions,
    TrialResult, REPORT_SCHEMA_VERSION,
};
pub use pipeline::{augment_sample, feature_fuse_to_image, fused_image, run_pipeline, PipelineOutput};
