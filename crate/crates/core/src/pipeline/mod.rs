//! Pipeline orchestration: coarse-alignment training, iterative
//! self-training, evaluation, and the ablation harness.

mod ablation;
mod config;
mod eval;
mod train;

pub use ablation::{ablate, AblationResult, AblationRow, AblationVariant, ABLATION_VARIANTS};
pub use config::{LossWeights, RunConfig, Toggles, TrainingConfig};
pub use eval::{evaluate, EvalResult};
pub use train::{run_pipeline, step0_coarse, step_k, Datasets, PipelineOutput, StepReport};
