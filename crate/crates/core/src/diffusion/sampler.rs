use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::condition::Condition;
use super::model::EpsPredictor;
use super::schedule::NoiseSchedule;
use super::DiffusionError;
use crate::numerics::{derive_seed, Rng};
use crate::worlds::BOX_HALF_WIDTH;

/// Guidance scales `(s_I, s_E)` for the image and instruction conditions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Guidance {
    pub image: f64,
    pub instruction: f64,
}

impl Default for Guidance {
    fn default() -> Self {
        Self {
            image: 1.5,
            instruction: 7.5,
        }
    }
}

impl Guidance {
    /// Plain conditional sampling.
    pub const NONE: Guidance = Guidance {
        image: 1.0,
        instruction: 1.0,
    };

    pub fn new(image: f64, instruction: f64) -> Result<Self, DiffusionError> {
        if !(image >= 0.0 && instruction >= 0.0 && image.is_finite() && instruction.is_finite()) {
            return Err(DiffusionError::InvalidArgument(format!("guidance ({image}, {instruction})")));
        }
        Ok(Self { image, instruction })
    }
}

/// Dual classifier-free guidance:
/// `ε̃ = ε(∅,∅) + s_I (ε(c_I,∅) − ε(∅,∅)) + s_E (ε(c_I,c_E) − ε(c_I,∅))`.
/// The reward bucket, if any, is kept in all three terms. At `(1, 1)` this is
/// exactly `ε(c_I, c_E)` and only one network call is made.
pub fn guided_eps<P: EpsPredictor + ?Sized>(
    model: &P,
    z: [f64; 2],
    t: usize,
    cond: &Condition,
    guidance: Guidance,
) -> [f64; 2] {
    let full = model.predict(z, t, cond);
    if guidance.image == 1.0 && guidance.instruction == 1.0 {
        return full;
    }
    let image_only = model.predict(z, t, &cond.without_instruction());
    let none = model.predict(z, t, &cond.without_instruction().without_image());
    let mut out = [0.0; 2];
    for k in 0..2 {
        out[k] = none[k] + guidance.image * (image_only[k] - none[k]) + guidance.instruction * (full[k] - image_only[k]);
    }
    out
}

/// Timesteps visited by a chain of `steps` steps: all of `1..=T`, or an evenly
/// spaced subsequence when `steps < T`.
pub fn timesteps(schedule: &NoiseSchedule, steps: usize) -> Vec<usize> {
    let total = schedule.steps();
    if steps == 0 || steps >= total {
        return (1..=total).collect();
    }
    let mut ts: Vec<usize> = (1..=steps)
        .map(|k| ((k as f64 * total as f64 / steps as f64).round() as usize).clamp(1, total))
        .collect();
    ts.dedup();
    ts
}

/// Ancestral reverse chain from `z_T ~ N(0, I)`:
/// `z_{t−1} = (z_t − β_t/√(1−ᾱ_t) · ε̃) / √α_t + σ_t · n`, with `σ_t = √β_t`,
/// written through the predicted `x̂_0 = (z_t − √(1−ᾱ_t) ε̃) / √ᾱ_t`, which is
/// clipped to the world box. Unclipped, the two forms are identical.
/// With fewer steps than `T` the per-step `β` is recomputed from `ᾱ` at the
/// visited timesteps. The codec is the identity, so `z_0` is the sample.
pub fn sample<P: EpsPredictor + ?Sized>(
    model: &P,
    schedule: &NoiseSchedule,
    cond: &Condition,
    guidance: Guidance,
    steps: usize,
    rng: &mut Rng,
) -> [f64; 2] {
    let ts = timesteps(schedule, steps);
    let mut z = rng.normal2();
    for (k, &t) in ts.iter().enumerate().rev() {
        let prev = if k == 0 { 0 } else { ts[k - 1] };
        let ab = schedule.alpha_bar(t);
        let alpha = ab / schedule.alpha_bar(prev);
        let beta = 1.0 - alpha;
        let ab_prev = ab / alpha;
        let eps = guided_eps(model, z, t, cond, guidance);
        let noise = rng.normal2();
        let sigma = beta.sqrt();
        let (c0, ct) = (ab_prev.sqrt() * beta / (1.0 - ab), alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab));
        for d in 0..2 {
            let x0 = ((z[d] - (1.0 - ab).sqrt() * eps[d]) / ab.sqrt()).clamp(-BOX_HALF_WIDTH, BOX_HALF_WIDTH);
            z[d] = c0 * x0 + ct * z[d] + sigma * noise[d];
        }
    }
    z
}

/// Draws one sample per condition; sample `i` uses seed `derive_seed(base_seed, i)`.
pub fn sample_many<P: EpsPredictor + ?Sized>(
    model: &P,
    schedule: &NoiseSchedule,
    conds: &[Condition],
    guidance: Guidance,
    steps: usize,
    base_seed: u64,
) -> Vec<[f64; 2]> {
    conds
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let mut rng = Rng::new(derive_seed(base_seed, i as u64));
            sample(model, schedule, c, guidance, steps, &mut rng)
        })
        .collect()
}
