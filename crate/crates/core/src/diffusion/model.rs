use serde::{Deserialize, Serialize};

use super::condition::{bucket_columns, encode, Condition, FEATURE_DIM};
use super::schedule::{NoiseSchedule, ScheduleConfig};
use super::DiffusionError;
use crate::numerics::{Activation, Checkpoint, Mlp, Rng};
use crate::worlds::EditInstruction;

pub const CHECKPOINT_KIND: &str = "diffusion";

/// Anything that predicts the noise in `z_t` given `t` and a condition.
pub trait EpsPredictor: Sync {
    fn predict(&self, z: [f64; 2], t: usize, cond: &Condition) -> [f64; 2];
}

/// `ε_θ(z_t, t, c)` plus its schedule. The latent codec is the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionModel {
    pub net: Mlp,
    pub schedule: NoiseSchedule,
    /// Bucket used for the reward condition at inference; `Some(5)` after reward-conditioned fine-tuning.
    pub inference_bucket: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    feature_dim: usize,
    inference_bucket: Option<usize>,
}

impl DiffusionModel {
    pub fn new(hidden: &[usize], schedule: NoiseSchedule, rng: &mut Rng) -> Result<Self, DiffusionError> {
        let mut widths = vec![FEATURE_DIM];
        widths.extend_from_slice(hidden);
        widths.push(2);
        Ok(Self {
            net: Mlp::init(&widths, Activation::Tanh, rng)?,
            schedule,
            inference_bucket: None,
        })
    }

    /// Condition used when sampling edits for `(input, instruction)`.
    pub fn inference_condition(&self, image: [f64; 2], instruction: &EditInstruction) -> Condition {
        Condition::new(image, instruction).with_bucket(self.inference_bucket)
    }

    /// Zeroes the first-layer columns of the reward-bucket condition so the model ignores it.
    pub fn ablate_bucket_condition(&mut self) {
        let n_in = self.net.input_dim();
        let w = self.net.weight_mut(0);
        for row in w.chunks_mut(n_in) {
            for c in bucket_columns() {
                row[c] = 0.0;
            }
        }
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        let mut ckpt = Checkpoint::from_network(CHECKPOINT_KIND, &self.net, seed);
        ckpt.schedule = serde_json::to_value(self.schedule.config()).expect("schedule serializes");
        ckpt.metadata = serde_json::to_value(Metadata {
            feature_dim: FEATURE_DIM,
            inference_bucket: self.inference_bucket,
        })
        .expect("metadata serializes");
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, DiffusionError> {
        if ckpt.kind != CHECKPOINT_KIND {
            return Err(DiffusionError::Checkpoint(format!("expected kind {CHECKPOINT_KIND:?}, got {:?}", ckpt.kind)));
        }
        let config: ScheduleConfig =
            serde_json::from_value(ckpt.schedule.clone()).map_err(|e| DiffusionError::Checkpoint(e.to_string()))?;
        let meta: Metadata =
            serde_json::from_value(ckpt.metadata.clone()).map_err(|e| DiffusionError::Checkpoint(e.to_string()))?;
        if meta.feature_dim != FEATURE_DIM || ckpt.widths.first() != Some(&FEATURE_DIM) || ckpt.widths.last() != Some(&2) {
            return Err(DiffusionError::Checkpoint(format!("incompatible widths {:?}", ckpt.widths)));
        }
        if let Some(b) = meta.inference_bucket {
            if !(1..=super::BUCKETS).contains(&b) {
                return Err(DiffusionError::Checkpoint(format!("inference bucket {b}")));
            }
        }
        Ok(Self {
            net: ckpt.network()?,
            schedule: NoiseSchedule::new(config)?,
            inference_bucket: meta.inference_bucket,
        })
    }

    pub fn features(&self, z: [f64; 2], t: usize, cond: &Condition) -> [f64; FEATURE_DIM] {
        let mut x = [0.0; FEATURE_DIM];
        encode(z, t, self.schedule.steps(), cond, &mut x);
        x
    }
}

impl EpsPredictor for DiffusionModel {
    fn predict(&self, z: [f64; 2], t: usize, cond: &Condition) -> [f64; 2] {
        let out = self.net.forward_unchecked(&self.features(z, t, cond));
        [out[0], out[1]]
    }
}
