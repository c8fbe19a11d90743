//! End-to-end pipeline: stage execution with a hashed run manifest,
//! evaluation sweeps, paired comparisons and report emission.

mod eval;
mod pipeline;
mod report;

pub use eval::{
    compare, condition_scores, eval_conditions, evaluate, spearman, Comparison, ConditionScores, MetricsRow,
    METRICS_SCHEMA_VERSION, TIE_BAND,
};
pub use pipeline::{
    default_comparisons, model_label, BucketFile, Evaluation, EVALUATION_FILE, run_pipeline, run_single_stage, sha256_hex, Artifact, EvalConfig,
    PipelineConfig, RunManifest, Stage, StageRecord, MANIFEST_FILE, MANIFEST_SCHEMA_VERSION,
};
pub use report::{emit_report, metrics_csv, parse_metrics_csv, tradeoff_svg, Report};

use crate::diffusion::DiffusionError;
use crate::finetune::FinetuneError;
use crate::instructions::InstructionError;
use crate::numerics::NumericsError;
use crate::preference::PreferenceError;
use crate::reward::RewardError;
use crate::worlds::WorldError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("mismatch: {0}")]
    Mismatch(String),
    #[error("missing input {0}")]
    MissingInput(String),
    #[error("parse error in {0}")]
    Parse(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        source: Box<HarnessError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Preference(#[from] PreferenceError),
    #[error(transparent)]
    Finetune(#[from] FinetuneError),
    #[error(transparent)]
    Instruction(#[from] InstructionError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
