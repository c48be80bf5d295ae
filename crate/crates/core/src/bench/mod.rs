//! Synthetic lab and experiment harness.
//!
//! [`synthetic`] builds the two-feature dataset, the rule black box, a
//! perturbation surrogate explainer and noise augmentation. [`experiments`]
//! runs the clustering noise sweep and the projection timing sweep.

pub mod experiments;
pub mod synthetic;

pub use experiments::{
    gen_cluster_blobs, run_noise_experiment, run_projection_timing, BlobSpec, ExperimentReport,
    NoiseExperimentConfig, NoiseRow, Pipeline, ProjectionMethod, ProjectionRow,
    ProjectionTimingConfig,
};
pub use synthetic::{
    add_noise_columns, blackbox_predict, gen_synthetic_dataset, surrogate_attributions, BlackBox,
    RuleBlackBox, SurrogateConfig, SyntheticDataset, SyntheticSpec,
};
