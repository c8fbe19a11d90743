use serde::{Deserialize, Serialize};

use super::loss::{denoising_loss_and_grad, denoising_loss_value, DenoisingRecord, LossOptions, DEFAULT_DROPOUT};
use super::model::DiffusionModel;
use super::schedule::{NoiseSchedule, ScheduleConfig};
use super::DiffusionError;
use crate::numerics::{adam_step, AdamConfig, AdamState, Rng};
use crate::worlds::Triplet;

const HELDOUT_CAP: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate decays linearly to `lr * final_lr_fraction`.
    pub final_lr_fraction: f64,
    pub dropout: f64,
    pub holdout_fraction: f64,
    pub log_every: usize,
    pub schedule: ScheduleConfig,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            steps: 3000,
            batch_size: 128,
            lr: 3e-3,
            final_lr_fraction: 0.1,
            dropout: DEFAULT_DROPOUT,
            holdout_fraction: 0.1,
            log_every: 50,
            schedule: ScheduleConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DiffusionError> {
        if self.batch_size == 0 || self.log_every == 0 {
            return Err(DiffusionError::InvalidArgument("batch_size and log_every must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(DiffusionError::InvalidArgument(format!("learning rate {} / {}", self.lr, self.final_lr_fraction)));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) || !(0.0..1.0).contains(&self.dropout) {
            return Err(DiffusionError::InvalidArgument("holdout_fraction and dropout must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let frac = if self.steps <= 1 { 0.0 } else { step as f64 / (self.steps - 1) as f64 };
        self.lr * (1.0 - (1.0 - self.final_lr_fraction) * frac)
    }
}

/// Loss curve entry: `(step, mean loss over the logging window)`.
pub type CurvePoint = (usize, f64);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_records: usize,
    pub heldout_records: usize,
    pub heldout_initial: f64,
    pub heldout_final: f64,
    pub loss_curve: Vec<CurvePoint>,
}

impl TrainReport {
    /// `1 − final / initial` held-out loss.
    pub fn heldout_reduction(&self) -> f64 {
        1.0 - self.heldout_final / self.heldout_initial
    }
}

/// Adam loop over uniformly drawn minibatches of `0..n` (with replacement).
/// `batch_loss` receives the batch indices and must overwrite the gradient buffer.
pub fn fit<F>(
    model: &mut DiffusionModel,
    n: usize,
    cfg: &TrainConfig,
    rng: &mut Rng,
    mut batch_loss: F,
) -> Result<Vec<CurvePoint>, DiffusionError>
where
    F: FnMut(&DiffusionModel, &[usize], &mut Rng, &mut [f64]) -> Result<f64, DiffusionError>,
{
    cfg.validate()?;
    if n == 0 {
        return Err(DiffusionError::EmptyBatch);
    }
    let mut state = AdamState::new(model.net.num_params(), cfg.adam);
    let mut grad = vec![0.0; model.net.num_params()];
    let mut curve = Vec::new();
    let mut window = 0.0;
    let mut count = 0;
    for step in 0..cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.below(n)).collect();
        let loss = batch_loss(model, &idx, rng, &mut grad)?;
        if !loss.is_finite() {
            return Err(DiffusionError::Diverged(format!("loss {loss} at step {step}")));
        }
        adam_step(model.net.params_mut().values_mut(), &grad, &mut state, cfg.lr_at(step))
            .map_err(|e| DiffusionError::Diverged(e.to_string()))?;
        window += loss;
        count += 1;
        if count == cfg.log_every || step + 1 == cfg.steps {
            curve.push((step + 1, window / count as f64));
            window = 0.0;
            count = 0;
        }
    }
    if !model.net.params().is_finite() {
        return Err(DiffusionError::Diverged("non-finite parameters".into()));
    }
    Ok(curve)
}

/// Splits record indices into (train, held-out). Datasets under 20 records
/// are evaluated on the training set itself.
pub fn split_indices(n: usize, holdout_fraction: f64, rng: &mut Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    if n < 20 || holdout_fraction <= 0.0 {
        return (idx.clone(), idx);
    }
    rng.shuffle(&mut idx);
    let h = ((n as f64 * holdout_fraction).round() as usize).clamp(1, n - 1);
    let heldout = idx[..h].to_vec();
    (idx[h..].to_vec(), heldout)
}

/// Held-out denoising loss on a fixed stream, so before/after values are comparable.
pub fn heldout_loss(
    model: &DiffusionModel,
    records: &[DenoisingRecord],
    opts: LossOptions,
    weights: Option<&[f64]>,
    stream: &Rng,
) -> Result<f64, DiffusionError> {
    let n = records.len().min(HELDOUT_CAP);
    let no_dropout = LossOptions { dropout: 0.0, ..opts };
    denoising_loss_value(model, &model.schedule, &records[..n], weights.map(|w| &w[..n]), no_dropout, &mut stream.clone())
}

/// Instructional supervised training from scratch.
pub fn train_sft(dataset: &[Triplet], cfg: &TrainConfig, rng: &mut Rng) -> Result<(DiffusionModel, TrainReport), DiffusionError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(DiffusionError::EmptyBatch);
    }
    let records: Vec<DenoisingRecord> = dataset.iter().map(DenoisingRecord::from_triplet).collect();
    let (train_idx, held_idx) = split_indices(records.len(), cfg.holdout_fraction, &mut rng.fork("split"));
    let train: Vec<DenoisingRecord> = train_idx.iter().map(|&i| records[i]).collect();
    let held: Vec<DenoisingRecord> = held_idx.iter().map(|&i| records[i]).collect();
    let mut model = DiffusionModel::new(&cfg.hidden, NoiseSchedule::new(cfg.schedule)?, &mut rng.fork("init"))?;
    let opts = LossOptions {
        dropout: cfg.dropout,
        ..LossOptions::default()
    };
    let held_stream = rng.fork("heldout");
    let heldout_initial = heldout_loss(&model, &held, opts, None, &held_stream)?;
    let mut batch_rng = rng.fork("batches");
    let mut buf = Vec::with_capacity(cfg.batch_size);
    let curve = fit(&mut model, train.len(), cfg, &mut batch_rng, |m, idx, r, g| {
        buf.clear();
        buf.extend(idx.iter().map(|&i| train[i]));
        denoising_loss_and_grad(m, &buf, None, opts, r, g)
    })?;
    let heldout_final = heldout_loss(&model, &held, opts, None, &held_stream)?;
    let report = TrainReport {
        train_records: train.len(),
        heldout_records: held.len(),
        heldout_initial,
        heldout_final,
        loss_curve: curve,
    };
    if report.heldout_reduction() < 0.5 {
        log::warn!(
            "held-out loss fell only {:.1}% ({:.4} -> {:.4})",
            100.0 * report.heldout_reduction(),
            heldout_initial,
            heldout_final
        );
    }
    Ok((model, report))
}
