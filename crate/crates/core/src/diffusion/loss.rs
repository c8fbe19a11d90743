use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::condition::{Condition, InstructionFeatures, BUCKETS};
use super::model::{DiffusionModel, EpsPredictor};
use super::schedule::NoiseSchedule;
use super::{forward_noise_unchecked, DiffusionError};
use crate::numerics::{derive_seed, Rng};
use crate::worlds::Triplet;

/// Default probability of nulling each condition independently during training.
pub const DEFAULT_DROPOUT: f64 = 0.05;

const CHUNK: usize = 32;

/// One training example for the denoiser: condition parts plus the clean target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoisingRecord {
    pub image: [f64; 2],
    pub instruction: InstructionFeatures,
    pub target: [f64; 2],
    pub bucket: Option<usize>,
}

impl DenoisingRecord {
    pub fn from_triplet(t: &Triplet) -> Self {
        Self {
            image: t.input.point,
            instruction: (&t.instruction).into(),
            target: t.edited.point,
            bucket: None,
        }
    }
}

/// Whether the reward-bucket condition is fed to the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BucketUse {
    /// Always the null bucket.
    Null,
    /// The record's bucket, subject to dropout; missing buckets are rejected.
    Conditioned,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossOptions {
    pub dropout: f64,
    pub buckets: BucketUse,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            dropout: DEFAULT_DROPOUT,
            buckets: BucketUse::Null,
        }
    }
}

/// Per-record random draws. Always consumed in the same order so that every
/// loss variant sees the same stream: `t`, `ε`, then three dropout uniforms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Draw {
    pub t: usize,
    pub eps: [f64; 2],
    pub dropout: [f64; 3],
}

impl Draw {
    pub fn new(steps: usize, rng: &mut Rng) -> Self {
        let t = 1 + rng.below(steps);
        let eps = rng.normal2();
        let dropout = [rng.uniform(), rng.uniform(), rng.uniform()];
        Self { t, eps, dropout }
    }
}

/// Derives the per-record draws for a batch from one value of `rng`.
pub fn batch_draws(n: usize, steps: usize, rng: &mut Rng) -> Vec<Draw> {
    let seed = rng.next_u64();
    (0..n)
        .map(|i| Draw::new(steps, &mut Rng::new(derive_seed(seed, i as u64))))
        .collect()
}

fn training_condition(r: &DenoisingRecord, d: &Draw, opts: &LossOptions) -> Condition {
    let p = opts.dropout;
    Condition {
        image: (d.dropout[0] >= p).then_some(r.image),
        instruction: (d.dropout[1] >= p).then_some(r.instruction),
        bucket: match opts.buckets {
            BucketUse::Null => None,
            BucketUse::Conditioned => r.bucket.filter(|_| d.dropout[2] >= p),
        },
    }
}

fn check_batch(batch: &[DenoisingRecord], weights: Option<&[f64]>, opts: &LossOptions) -> Result<(), DiffusionError> {
    if batch.is_empty() {
        return Err(DiffusionError::EmptyBatch);
    }
    if !(0.0..1.0).contains(&opts.dropout) {
        return Err(DiffusionError::InvalidArgument(format!("dropout {}", opts.dropout)));
    }
    if let Some(w) = weights {
        if w.len() != batch.len() || w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(DiffusionError::InvalidArgument("weights must be finite, nonnegative, one per record".into()));
        }
    }
    if opts.buckets == BucketUse::Conditioned {
        for (i, r) in batch.iter().enumerate() {
            match r.bucket {
                Some(b) if (1..=BUCKETS).contains(&b) => {}
                _ => return Err(DiffusionError::MissingBucket(i)),
            }
        }
    }
    Ok(())
}

/// `mean_i w_i ‖ε_i − ε̂(z_t, t, c_i)‖²` for any predictor (weights default to 1).
pub fn denoising_loss_value<P: EpsPredictor + ?Sized>(
    model: &P,
    schedule: &NoiseSchedule,
    batch: &[DenoisingRecord],
    weights: Option<&[f64]>,
    opts: LossOptions,
    rng: &mut Rng,
) -> Result<f64, DiffusionError> {
    check_batch(batch, weights, &opts)?;
    let draws = batch_draws(batch.len(), schedule.steps(), rng);
    let mut total = 0.0;
    for (i, (r, d)) in batch.iter().zip(&draws).enumerate() {
        let z = forward_noise_unchecked(schedule, r.target, d.t, d.eps);
        let e = model.predict(z, d.t, &training_condition(r, d, &opts));
        let err = (e[0] - d.eps[0]).powi(2) + (e[1] - d.eps[1]).powi(2);
        total += weights.map_or(1.0, |w| w[i]) * err;
    }
    Ok(total / batch.len() as f64)
}

/// Same loss as [`denoising_loss_value`] with its parameter gradient
/// accumulated into `grad` (which is overwritten).
///
/// Records are processed in fixed-size chunks in parallel; chunk results
/// are reduced in index order, so the result does not depend on the
/// number of worker threads.
pub fn denoising_loss_and_grad(
    model: &DiffusionModel,
    batch: &[DenoisingRecord],
    weights: Option<&[f64]>,
    opts: LossOptions,
    rng: &mut Rng,
    grad: &mut [f64],
) -> Result<f64, DiffusionError> {
    check_batch(batch, weights, &opts)?;
    if grad.len() != model.net.num_params() {
        return Err(DiffusionError::InvalidArgument("gradient buffer length".into()));
    }
    let schedule = &model.schedule;
    let draws = batch_draws(batch.len(), schedule.steps(), rng);
    let n = batch.len() as f64;
    let p = model.net.num_params();
    let partials: Vec<(f64, Vec<f64>)> = batch
        .par_chunks(CHUNK)
        .zip(draws.par_chunks(CHUNK))
        .enumerate()
        .map(|(c, (recs, ds))| {
            let mut g = vec![0.0; p];
            let mut loss = 0.0;
            for (k, (r, d)) in recs.iter().zip(ds).enumerate() {
                let w = weights.map_or(1.0, |w| w[c * CHUNK + k]);
                let z = forward_noise_unchecked(schedule, r.target, d.t, d.eps);
                let x = model.features(z, d.t, &training_condition(r, d, &opts));
                let trace = model.net.forward_trace_unchecked(&x);
                let out = trace.output();
                let diff = [out[0] - d.eps[0], out[1] - d.eps[1]];
                loss += w * (diff[0] * diff[0] + diff[1] * diff[1]);
                let cot = [2.0 * w * diff[0] / n, 2.0 * w * diff[1] / n];
                model
                    .net
                    .backward_into(&trace, &cot, &mut g, None)
                    .expect("dimensions checked");
            }
            (loss, g)
        })
        .collect();
    grad.fill(0.0);
    let mut total = 0.0;
    for (l, g) in partials {
        total += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok(total / n)
}

/// Instructional supervised loss on triplets (null reward bucket, unit weights).
pub fn sft_loss<P: EpsPredictor + ?Sized>(
    model: &P,
    schedule: &NoiseSchedule,
    batch: &[Triplet],
    rng: &mut Rng,
) -> Result<f64, DiffusionError> {
    let records: Vec<DenoisingRecord> = batch.iter().map(DenoisingRecord::from_triplet).collect();
    denoising_loss_value(model, schedule, &records, None, LossOptions::default(), rng)
}
