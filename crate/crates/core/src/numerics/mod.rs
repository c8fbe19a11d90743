//! Small differentiable-network substrate: multilayer perceptrons with
//! hand-written reverse mode, Adam, seeded streams, finite-difference checks
//! and the checkpoint format.

mod adam;
mod checkpoint;
mod gradcheck;
mod mlp;
mod rng;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use gradcheck::{grad_check, GradCheckReport, RELATIVE_ERROR_FLOOR};
pub use mlp::{Activation, Block, Mlp, ParameterVector, Trace};
pub use rng::{derive_seed, mix64, Rng};

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid architecture {0}")]
    InvalidArchitecture(String),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
