//! Reward-based fine-tuning of the diffusion model: the exponentially
//! weighted denoising loss, the reward-bucket conditioned loss and a plain
//! supervised control with the same budget.

use serde::{Deserialize, Serialize};

use crate::diffusion::{
    denoising_loss_and_grad, denoising_loss_value, fit, BucketUse, Condition, DenoisingRecord, DiffusionError,
    DiffusionModel, LossOptions, TrainConfig, BUCKETS, DEFAULT_DROPOUT,
};
use crate::numerics::{AdamConfig, Rng};
use crate::reward::BucketTable;
use crate::worlds::Triplet;

#[derive(Debug, thiserror::Error)]
pub enum FinetuneError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneMode {
    Wr,
    Cr,
    SftBaseline,
}

impl FinetuneMode {
    pub fn name(self) -> &'static str {
        match self {
            FinetuneMode::Wr => "wr",
            FinetuneMode::Cr => "cr",
            FinetuneMode::SftBaseline => "sft_baseline",
        }
    }
}

impl std::str::FromStr for FinetuneMode {
    type Err = FinetuneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "wr" => Ok(FinetuneMode::Wr),
            "cr" => Ok(FinetuneMode::Cr),
            "sft_baseline" | "sft-baseline" => Ok(FinetuneMode::SftBaseline),
            _ => Err(FinetuneError::InvalidConfig(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub mode: FinetuneMode,
    /// Temperature of the exponential weights, on standardized scores.
    pub eta: f64,
    pub weight_clip: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub final_lr_fraction: f64,
    pub dropout: f64,
    pub log_every: usize,
    pub adam: AdamConfig,
    /// Replace bucket labels with score-independent ones (control run for `cr`).
    pub permute_buckets: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            mode: FinetuneMode::Wr,
            eta: 1.0,
            weight_clip: 10.0,
            steps: 2000,
            batch_size: 128,
            lr: 2e-3,
            final_lr_fraction: 0.1,
            dropout: DEFAULT_DROPOUT,
            log_every: 50,
            adam: AdamConfig::default(),
            permute_buckets: false,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<(), FinetuneError> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(FinetuneError::InvalidConfig(format!("eta {}", self.eta)));
        }
        if !(self.weight_clip > 0.0) {
            return Err(FinetuneError::InvalidConfig(format!("weight clip {}", self.weight_clip)));
        }
        if self.permute_buckets && self.mode != FinetuneMode::Cr {
            return Err(FinetuneError::InvalidConfig("permute_buckets only applies to cr mode".into()));
        }
        Ok(())
    }

    fn train_config(&self, model: &DiffusionModel) -> TrainConfig {
        TrainConfig {
            hidden: model.net.widths()[1..model.net.widths().len() - 1].to_vec(),
            steps: self.steps,
            batch_size: self.batch_size,
            lr: self.lr,
            final_lr_fraction: self.final_lr_fraction,
            dropout: self.dropout,
            holdout_fraction: 0.0,
            log_every: self.log_every,
            schedule: model.schedule.config(),
            adam: self.adam,
        }
    }
}

/// `ω = min(exp(score / η), clip)`.
pub fn wr_weight(score: f64, eta: f64, clip: f64) -> f64 {
    (score / eta).exp().min(clip)
}

/// Weights of one batch, rescaled to mean 1.
pub fn normalized_weights(scores: &[f64], eta: f64, clip: f64) -> Vec<f64> {
    let mut w: Vec<f64> = scores.iter().map(|&s| wr_weight(s, eta, clip)).collect();
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    for x in &mut w {
        *x /= mean;
    }
    w
}

fn check_scores(batch: &[DenoisingRecord], scores: &[f64], eta: f64) -> Result<(), DiffusionError> {
    if scores.len() != batch.len() || scores.iter().any(|s| !s.is_finite()) {
        return Err(DiffusionError::InvalidArgument("one finite score per record required".into()));
    }
    if !(eta > 0.0) {
        return Err(DiffusionError::InvalidArgument(format!("eta {eta}")));
    }
    Ok(())
}

/// `mean_i ω_i ‖ε_i − ε̂(z_t, t, c_i)‖²` with batch-normalized weights.
pub fn wr_loss(
    model: &DiffusionModel,
    batch: &[DenoisingRecord],
    scores: &[f64],
    eta: f64,
    clip: f64,
    opts: LossOptions,
    rng: &mut Rng,
) -> Result<f64, DiffusionError> {
    check_scores(batch, scores, eta)?;
    let w = normalized_weights(scores, eta, clip);
    denoising_loss_value(model, &model.schedule, batch, Some(&w), opts, rng)
}

pub fn wr_loss_and_grad(
    model: &DiffusionModel,
    batch: &[DenoisingRecord],
    scores: &[f64],
    eta: f64,
    clip: f64,
    opts: LossOptions,
    rng: &mut Rng,
    grad: &mut [f64],
) -> Result<f64, DiffusionError> {
    check_scores(batch, scores, eta)?;
    let w = normalized_weights(scores, eta, clip);
    denoising_loss_and_grad(model, batch, Some(&w), opts, rng, grad)
}

/// Extended condition `[c_I, c_E, c_R]` for a training triplet.
pub fn cr_extend(t: &Triplet, score: f64, table: &BucketTable) -> Condition {
    Condition::new(t.input.point, &t.instruction).with_bucket(Some(table.bucket(score)))
}

/// Denoising records carrying the bucket of each record's score.
pub fn cr_records(data: &[Triplet], scores: &[f64], table: &BucketTable) -> Vec<DenoisingRecord> {
    data.iter()
        .zip(scores)
        .map(|(t, &s)| DenoisingRecord {
            bucket: Some(table.bucket(s)),
            ..DenoisingRecord::from_triplet(t)
        })
        .collect()
}

fn cr_options(dropout: f64) -> LossOptions {
    LossOptions {
        dropout,
        buckets: BucketUse::Conditioned,
    }
}

/// Denoising loss with the bucket condition; every record must carry a bucket.
pub fn cr_loss(model: &DiffusionModel, batch: &[DenoisingRecord], dropout: f64, rng: &mut Rng) -> Result<f64, DiffusionError> {
    denoising_loss_value(model, &model.schedule, batch, None, cr_options(dropout), rng)
}

pub fn cr_loss_and_grad(
    model: &DiffusionModel,
    batch: &[DenoisingRecord],
    dropout: f64,
    rng: &mut Rng,
    grad: &mut [f64],
) -> Result<f64, DiffusionError> {
    denoising_loss_and_grad(model, batch, None, cr_options(dropout), rng, grad)
}

/// Bucket labels independent of the scores with score-matched label groups:
/// records sorted by score are cut into blocks of five and each block gets a
/// random permutation of `1..=5` (a short last block gets distinct random labels).
pub fn stratified_labels(scores: &[f64], rng: &mut Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]).then(i.cmp(&j)));
    let mut labels = vec![0; scores.len()];
    for block in order.chunks(BUCKETS) {
        let mut perm: Vec<usize> = (1..=BUCKETS).collect();
        rng.shuffle(&mut perm);
        for (&i, &b) in block.iter().zip(&perm) {
            labels[i] = b;
        }
    }
    labels
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub mode: FinetuneMode,
    pub eta: f64,
    pub weight_clip: f64,
    pub steps: usize,
    pub permuted_buckets: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket_table: Option<BucketTable>,
    /// Records per bucket `1..=5` (cr mode).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bucket_counts: Vec<usize>,
    /// Fraction of records whose weight hit the clip (wr mode).
    pub clipped_fraction: f64,
    pub loss_curve: Vec<(usize, f64)>,
}

/// Fine-tunes a copy of `model` on `data` with per-record standardized reward
/// `scores`. In cr mode the returned model samples with bucket 5 by default.
pub fn finetune(
    model: &DiffusionModel,
    data: &[Triplet],
    scores: &[f64],
    table: Option<&BucketTable>,
    cfg: &FinetuneConfig,
    rng: &mut Rng,
) -> Result<(DiffusionModel, FinetuneReport), FinetuneError> {
    cfg.validate()?;
    if data.is_empty() || scores.len() != data.len() {
        return Err(FinetuneError::InvalidConfig(format!("{} records, {} scores", data.len(), scores.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(FinetuneError::InvalidConfig("non-finite score".into()));
    }
    let tc = cfg.train_config(model);
    let mut out = model.clone();
    let mut batch_rng = rng.fork("batches");
    let mut buf = Vec::with_capacity(cfg.batch_size);
    let mut sbuf = Vec::with_capacity(cfg.batch_size);
    let mut report = FinetuneReport {
        mode: cfg.mode,
        eta: cfg.eta,
        weight_clip: cfg.weight_clip,
        steps: cfg.steps,
        permuted_buckets: cfg.permute_buckets,
        bucket_table: None,
        bucket_counts: Vec::new(),
        clipped_fraction: 0.0,
        loss_curve: Vec::new(),
    };
    let plain = LossOptions {
        dropout: cfg.dropout,
        ..LossOptions::default()
    };
    match cfg.mode {
        FinetuneMode::SftBaseline => {
            let records: Vec<DenoisingRecord> = data.iter().map(DenoisingRecord::from_triplet).collect();
            report.loss_curve = fit(&mut out, records.len(), &tc, &mut batch_rng, |m, idx, r, g| {
                buf.clear();
                buf.extend(idx.iter().map(|&i| records[i]));
                denoising_loss_and_grad(m, &buf, None, plain, r, g)
            })?;
        }
        FinetuneMode::Wr => {
            let records: Vec<DenoisingRecord> = data.iter().map(DenoisingRecord::from_triplet).collect();
            let clipped = scores.iter().filter(|&&s| (s / cfg.eta).exp() >= cfg.weight_clip).count();
            report.clipped_fraction = clipped as f64 / scores.len() as f64;
            report.loss_curve = fit(&mut out, records.len(), &tc, &mut batch_rng, |m, idx, r, g| {
                buf.clear();
                buf.extend(idx.iter().map(|&i| records[i]));
                sbuf.clear();
                sbuf.extend(idx.iter().map(|&i| scores[i]));
                wr_loss_and_grad(m, &buf, &sbuf, cfg.eta, cfg.weight_clip, plain, r, g)
            })?;
        }
        FinetuneMode::Cr => {
            let table = table.ok_or_else(|| FinetuneError::InvalidConfig("cr mode requires a bucket table".into()))?;
            let mut records = cr_records(data, scores, table);
            if cfg.permute_buckets {
                for (r, b) in records.iter_mut().zip(stratified_labels(scores, &mut rng.fork("permute"))) {
                    r.bucket = Some(b);
                }
            }
            let mut counts = vec![0; BUCKETS];
            for r in &records {
                counts[r.bucket.expect("bucketed") - 1] += 1;
            }
            report.bucket_counts = counts;
            report.bucket_table = Some(table.clone());
            report.loss_curve = fit(&mut out, records.len(), &tc, &mut batch_rng, |m, idx, r, g| {
                buf.clear();
                buf.extend(idx.iter().map(|&i| records[i]));
                cr_loss_and_grad(m, &buf, cfg.dropout, r, g)
            })?;
            out.inference_bucket = Some(BUCKETS);
        }
    }
    Ok((out, report))
}
