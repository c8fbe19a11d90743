//! Conditional denoising diffusion over 2D samples: linear noise schedule,
//! condition encoding with null slots, the denoising losses, dual
//! classifier-free guidance and the ancestral sampler.

mod condition;
mod loss;
mod model;
mod sampler;
mod schedule;
mod train;

pub use condition::{
    encode, time_embedding, Condition, InstructionFeatures, BUCKETS, COORD_SCALE, FEATURE_DIM, TIME_EMBEDDING_DIM,
};
pub use loss::{
    batch_draws, denoising_loss_and_grad, denoising_loss_value, sft_loss, BucketUse, DenoisingRecord, Draw,
    LossOptions, DEFAULT_DROPOUT,
};
pub use model::{DiffusionModel, EpsPredictor, CHECKPOINT_KIND};
pub use sampler::{guided_eps, sample, sample_many, timesteps, Guidance};
pub use schedule::{NoiseSchedule, ScheduleConfig};
pub use train::{fit, heldout_loss, split_indices, train_sft, CurvePoint, TrainConfig, TrainReport};

use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum DiffusionError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("timestep {t} outside 1..={steps}")]
    StepOutOfRange { t: usize, steps: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("record {0} has no reward bucket")]
    MissingBucket(usize),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// `z_t = √ᾱ_t · z + √(1 − ᾱ_t) · ε`.
pub fn forward_noise(schedule: &NoiseSchedule, z: [f64; 2], t: usize, eps: [f64; 2]) -> Result<[f64; 2], DiffusionError> {
    schedule.check_step(t)?;
    Ok(forward_noise_unchecked(schedule, z, t, eps))
}

pub(crate) fn forward_noise_unchecked(schedule: &NoiseSchedule, z: [f64; 2], t: usize, eps: [f64; 2]) -> [f64; 2] {
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    [a * z[0] + b * eps[0], a * z[1] + b * eps[1]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn schedule_algebra() {
        let s = NoiseSchedule::default();
        for t in 1..=s.steps() {
            assert!((s.alpha_bar(t) / s.alpha_bar(t - 1) - s.alpha(t)).abs() < 1e-12);
            assert_eq!(s.sigma(t), s.beta(t).sqrt());
            if t > 1 {
                assert!(s.beta(t) >= s.beta(t - 1));
                assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            }
        }
        assert!(s.alpha_bar(s.steps()) < 1e-4);
    }

    #[test]
    fn schedule_rejects_bad_betas() {
        for (a, b) in [(0.0, 0.1), (0.2, 0.1), (0.1, 1.0)] {
            assert!(NoiseSchedule::new(ScheduleConfig {
                steps: 10,
                beta_start: a,
                beta_end: b
            })
            .is_err());
        }
    }

    #[test]
    fn forward_noise_examples() {
        let s = NoiseSchedule::default();
        let z1 = forward_noise(&s, [1.0, 0.0], 1, [0.0, 1.0]).unwrap();
        assert!((z1[0] - 0.9999f64.sqrt()).abs() < 1e-15);
        assert!((z1[1] - 0.01).abs() < 1e-15);
        let z = forward_noise(&s, [3.0, -1.0], 40, [0.0, 0.0]).unwrap();
        assert_eq!(z, [3.0 * s.alpha_bar(40).sqrt(), -s.alpha_bar(40).sqrt()]);
        let t = s.steps();
        let eps = [0.3, -0.7];
        let zt = forward_noise(&s, [2.0, 2.0], t, eps).unwrap();
        let dist = ((zt[0] - eps[0]).powi(2) + (zt[1] - eps[1]).powi(2)).sqrt();
        let ab = s.alpha_bar(t);
        let eps_norm = (eps[0] * eps[0] + eps[1] * eps[1]).sqrt();
        assert!(dist <= ab.sqrt() * 8f64.sqrt() + (1.0 - (1.0 - ab).sqrt()) * eps_norm + 1e-15);
        assert!(dist < 0.02);
        assert!(matches!(forward_noise(&s, [0.0; 2], 0, eps), Err(DiffusionError::StepOutOfRange { .. })));
        assert!(forward_noise(&s, [0.0; 2], t + 1, eps).is_err());
    }

    #[test]
    fn encoding_layout() {
        let instr = crate::worlds::EditInstruction::keep(crate::worlds::Object::Point);
        let mut full = [0.0; FEATURE_DIM];
        encode([1.0, 2.0], 5, 100, &Condition::new([0.5, 0.5], &instr).with_bucket(Some(5)), &mut full);
        let mut null = [0.0; FEATURE_DIM];
        encode([1.0, 2.0], 5, 100, &Condition::NULL, &mut null);
        // One-hot groups each have exactly one active slot.
        assert_eq!(full[21..32].iter().sum::<f64>(), 1.0);
        assert_eq!(null[21..32].iter().sum::<f64>(), 1.0);
        assert_eq!(full[34..40].iter().sum::<f64>(), 1.0);
        assert_eq!(null[39], 1.0);
        assert_eq!(null[20], 1.0);
        assert_eq!(full[20], 0.0);
    }

    #[test]
    fn timesteps_respacing() {
        let s = NoiseSchedule::default();
        assert_eq!(timesteps(&s, 100), (1..=100).collect::<Vec<_>>());
        let ts = timesteps(&s, 10);
        assert_eq!(ts.len(), 10);
        assert_eq!(*ts.last().unwrap(), 100);
        assert!(ts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m = DiffusionModel::new(&[8], NoiseSchedule::default(), &mut Rng::new(1)).unwrap();
        m.inference_bucket = Some(5);
        let back = DiffusionModel::from_checkpoint(&m.to_checkpoint(1)).unwrap();
        assert_eq!(back, m);
    }
}
