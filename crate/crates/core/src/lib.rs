//! Toy-scale laboratory for instruction-conditioned editing with human-feedback
//! fine-tuning.
//!
//! The pipeline has three learned stages: a conditional denoising diffusion
//! model trained on `(input, instruction, edited)` triplets, a reward model
//! trained from ranked variant edits, and reward-based fine-tuning of the
//! diffusion model (exponentially weighted loss or reward-bucket conditioning).
//! Everything runs on synthetic 2D worlds small enough that the underlying
//! math can be checked against exact discrete oracles.

pub mod diffusion;
pub mod finetune;
pub mod harness;
pub mod instructions;
pub mod jsonl;
pub mod numerics;
pub mod oracle;
pub mod preference;
pub mod reward;
pub mod worlds;
