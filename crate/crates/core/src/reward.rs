//! Reward model over `(input, instruction, edited)`, the pairwise
//! Bradley-Terry loss, grouped training, evaluation and quantile buckets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{BUCKETS, COORD_SCALE};
use crate::numerics::{adam_step, Activation, AdamConfig, AdamState, Checkpoint, Mlp, NumericsError, Rng};
use crate::preference::{pairs_from_ranking, PreferenceError, RankedGroup};
use crate::worlds::{EditInstruction, Sample, Triplet, INSTRUCTION_SLOTS};

pub const CHECKPOINT_KIND: &str = "reward";
/// `input(2) ‖ instruction slot(10) ‖ params(2) ‖ edited(2) ‖ edited − input(2)`.
pub const RM_FEATURE_DIM: usize = 2 + INSTRUCTION_SLOTS + 2 + 2 + 2;

#[derive(Debug, thiserror::Error)]
pub enum RewardError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no usable groups")]
    NoGroups,
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Preference(#[from] PreferenceError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub fn rm_features(input: &Sample, instr: &EditInstruction, edited: &Sample) -> [f64; RM_FEATURE_DIM] {
    let mut x = [0.0; RM_FEATURE_DIM];
    let (a, b) = (input.point, edited.point);
    x[0] = a[0] * COORD_SCALE;
    x[1] = a[1] * COORD_SCALE;
    x[2 + instr.slot()] = 1.0;
    let p = instr.param_features();
    let off = 2 + INSTRUCTION_SLOTS;
    x[off] = p[0];
    x[off + 1] = p[1];
    x[off + 2] = b[0] * COORD_SCALE;
    x[off + 3] = b[1] * COORD_SCALE;
    x[off + 4] = (b[0] - a[0]) * COORD_SCALE;
    x[off + 5] = (b[1] - a[1]) * COORD_SCALE;
    x
}

/// Scalar scorer `R_φ(x̃, c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardModel {
    pub net: Mlp,
}

impl RewardModel {
    pub fn new(hidden: &[usize], rng: &mut Rng) -> Result<Self, RewardError> {
        let mut widths = vec![RM_FEATURE_DIM];
        widths.extend_from_slice(hidden);
        widths.push(1);
        Ok(Self {
            net: Mlp::init(&widths, Activation::Tanh, rng)?,
        })
    }

    pub fn score(&self, input: &Sample, instr: &EditInstruction, edited: &Sample) -> f64 {
        self.net.forward_unchecked(&rm_features(input, instr, edited))[0]
    }

    pub fn score_triplet(&self, t: &Triplet) -> f64 {
        self.score(&t.input, &t.instruction, &t.edited)
    }

    pub fn score_group(&self, g: &RankedGroup) -> Vec<f64> {
        let c = &g.condition;
        g.variants.iter().map(|v| self.score(&c.input, &c.instruction, v)).collect()
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        let mut ckpt = Checkpoint::from_network(CHECKPOINT_KIND, &self.net, seed);
        ckpt.metadata = serde_json::json!({ "feature_dim": RM_FEATURE_DIM });
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, RewardError> {
        if ckpt.kind != CHECKPOINT_KIND {
            return Err(RewardError::Checkpoint(format!("expected kind {CHECKPOINT_KIND:?}, got {:?}", ckpt.kind)));
        }
        if ckpt.widths.first() != Some(&RM_FEATURE_DIM) || ckpt.widths.last() != Some(&1) {
            return Err(RewardError::Checkpoint(format!("incompatible widths {:?}", ckpt.widths)));
        }
        Ok(Self { net: ckpt.network()? })
    }
}

/// Scores every record of a dataset (in parallel, order preserved).
pub fn score_dataset(rm: &RewardModel, data: &[Triplet]) -> Vec<f64> {
    data.par_iter().map(|t| rm.score_triplet(t)).collect()
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `Σ_{(i ≻ j)} −log σ(R_i − R_j) = Σ softplus(R_j − R_i)` over the given pairs.
pub fn pairwise_loss(scores: &[f64], pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(i, j)| softplus(scores[j] - scores[i])).sum()
}

/// Bradley-Terry loss summed over all `C(K, 2)` pairs of every group.
pub fn bt_loss(rm: &RewardModel, groups: &[RankedGroup]) -> Result<f64, RewardError> {
    let mut total = 0.0;
    for g in groups {
        check_group(g)?;
        total += pairwise_loss(&rm.score_group(g), &pairs_from_ranking(g)?);
    }
    Ok(total)
}

fn check_group(g: &RankedGroup) -> Result<(), RewardError> {
    g.validate()?;
    if g.is_flagged() {
        return Err(RewardError::InvalidArgument("flagged group in reward batch".into()));
    }
    Ok(())
}

/// [`bt_loss`] scaled by `scale`, with its parameter gradient written to `grad`.
pub fn bt_loss_and_grad(rm: &RewardModel, groups: &[RankedGroup], scale: f64, grad: &mut [f64]) -> Result<f64, RewardError> {
    if grad.len() != rm.net.num_params() {
        return Err(RewardError::InvalidArgument("gradient buffer length".into()));
    }
    for g in groups {
        check_group(g)?;
    }
    let p = rm.net.num_params();
    let partials: Vec<Result<(f64, Vec<f64>), RewardError>> = groups
        .par_iter()
        .map(|g| {
            let c = &g.condition;
            let traces: Vec<_> = g
                .variants
                .iter()
                .map(|v| rm.net.forward_trace_unchecked(&rm_features(&c.input, &c.instruction, v)))
                .collect();
            let scores: Vec<f64> = traces.iter().map(|t| t.output()[0]).collect();
            let pairs = pairs_from_ranking(g)?;
            let mut d = vec![0.0; scores.len()];
            for &(i, j) in &pairs {
                // d softplus(R_j − R_i) = σ(R_j − R_i) · (dR_j − dR_i)
                let s = sigmoid(scores[j] - scores[i]);
                d[j] += s;
                d[i] -= s;
            }
            let mut gbuf = vec![0.0; p];
            for (t, di) in traces.iter().zip(&d) {
                rm.net.backward_into(t, &[di * scale], &mut gbuf, None)?;
            }
            Ok((pairwise_loss(&scores, &pairs) * scale, gbuf))
        })
        .collect();
    grad.fill(0.0);
    let mut total = 0.0;
    for part in partials {
        let (l, g) = part?;
        total += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RmConfig {
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub groups_per_step: usize,
    pub lr: f64,
    pub final_lr_fraction: f64,
    pub holdout_fraction: f64,
    pub log_every: usize,
    pub adam: AdamConfig,
}

impl Default for RmConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            steps: 1500,
            groups_per_step: 16,
            lr: 3e-3,
            final_lr_fraction: 0.1,
            holdout_fraction: 0.2,
            log_every: 50,
            adam: AdamConfig::default(),
        }
    }
}

impl RmConfig {
    fn validate(&self) -> Result<(), RewardError> {
        if self.groups_per_step == 0 || self.log_every == 0 {
            return Err(RewardError::InvalidArgument("groups_per_step and log_every must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(RewardError::InvalidArgument(format!("learning rate {} / {}", self.lr, self.final_lr_fraction)));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(RewardError::InvalidArgument("holdout_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }

    fn lr_at(&self, step: usize) -> f64 {
        let frac = if self.steps <= 1 { 0.0 } else { step as f64 / (self.steps - 1) as f64 };
        self.lr * (1.0 - (1.0 - self.final_lr_fraction) * frac)
    }
}

/// Splits groups by condition: all groups sharing a condition land on the
/// same side. Falls back to evaluating on the training groups when the
/// held-out side would be empty.
pub fn split_by_condition(groups: &[RankedGroup], holdout_fraction: f64) -> (Vec<RankedGroup>, Vec<RankedGroup>) {
    let (mut train, mut held) = (Vec::new(), Vec::new());
    for g in groups {
        let u = (g.condition.key() >> 11) as f64 / (1u64 << 53) as f64;
        if u < holdout_fraction {
            held.push(g.clone());
        } else {
            train.push(g.clone());
        }
    }
    if held.is_empty() || train.is_empty() {
        return (groups.to_vec(), groups.to_vec());
    }
    (train, held)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmReport {
    pub train_groups: usize,
    pub heldout_groups: usize,
    pub loss_curve: Vec<(usize, f64)>,
    pub heldout: RmEval,
}

/// Trains on whole groups: each step draws `groups_per_step` groups and
/// minimizes their mean per-group pairwise loss.
pub fn train_rm(groups: &[RankedGroup], cfg: &RmConfig, rng: &mut Rng) -> Result<(RewardModel, RmReport), RewardError> {
    cfg.validate()?;
    let usable: Vec<RankedGroup> = groups.iter().filter(|g| !g.is_flagged() && g.ranking.is_some()).cloned().collect();
    if usable.is_empty() {
        return Err(RewardError::NoGroups);
    }
    let (train, held) = split_by_condition(&usable, cfg.holdout_fraction);
    let mut rm = RewardModel::new(&cfg.hidden, &mut rng.fork("init"))?;
    let mut batch_rng = rng.fork("batches");
    let mut state = AdamState::new(rm.net.num_params(), cfg.adam);
    let mut grad = vec![0.0; rm.net.num_params()];
    let mut curve = Vec::new();
    let (mut window, mut count) = (0.0, 0);
    let mut batch = Vec::with_capacity(cfg.groups_per_step);
    for step in 0..cfg.steps {
        batch.clear();
        batch.extend((0..cfg.groups_per_step).map(|_| train[batch_rng.below(train.len())].clone()));
        let loss = bt_loss_and_grad(&rm, &batch, 1.0 / batch.len() as f64, &mut grad)?;
        if !loss.is_finite() {
            return Err(RewardError::Diverged(format!("loss {loss} at step {step}")));
        }
        adam_step(rm.net.params_mut().values_mut(), &grad, &mut state, cfg.lr_at(step))
            .map_err(|e| RewardError::Diverged(e.to_string()))?;
        window += loss;
        count += 1;
        if count == cfg.log_every || step + 1 == cfg.steps {
            curve.push((step + 1, window / count as f64));
            window = 0.0;
            count = 0;
        }
    }
    let heldout = eval_rm(&rm, &held, None)?;
    Ok((
        rm,
        RmReport {
            train_groups: train.len(),
            heldout_groups: held.len(),
            loss_curve: curve,
            heldout,
        },
    ))
}

/// Kendall τ-b; `None` when either side is constant.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len(), "kendall_tau needs equal lengths");
    let (mut conc, mut disc, mut tie_a, mut tie_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let da = (a[i] - a[j]).partial_cmp(&0.0)? as i64;
            let db = (b[i] - b[j]).partial_cmp(&0.0)? as i64;
            match (da, db) {
                (0, 0) => {}
                (0, _) => tie_a += 1,
                (_, 0) => tie_b += 1,
                _ if da == db => conc += 1,
                _ => disc += 1,
            }
        }
    }
    let n1 = (conc + disc + tie_a) as f64;
    let n2 = (conc + disc + tie_b) as f64;
    if n1 == 0.0 || n2 == 0.0 {
        return None;
    }
    Some((conc - disc) as f64 / (n1 * n2).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketCalibration {
    pub bucket: usize,
    pub count: usize,
    pub mean_score: Option<f64>,
    pub mean_oracle_reward: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmEval {
    pub groups: usize,
    pub pairs: usize,
    /// Fraction of ranked pairs the model orders the same way (ties count half).
    pub accuracy: f64,
    /// Mean over groups of Kendall τ-b between model scores and oracle rewards.
    pub kendall_tau: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub calibration: Vec<BucketCalibration>,
}

/// Held-out metrics. With a bucket table, also reports per-bucket means of
/// model score and oracle reward over every variant.
pub fn eval_rm(rm: &RewardModel, groups: &[RankedGroup], table: Option<&BucketTable>) -> Result<RmEval, RewardError> {
    if groups.is_empty() {
        return Err(RewardError::NoGroups);
    }
    let (mut correct, mut pairs) = (0.0, 0usize);
    let (mut tau_sum, mut tau_n) = (0.0, 0usize);
    let mut buckets = [(0usize, 0.0, 0.0); BUCKETS];
    for g in groups {
        let s = rm.score_group(g);
        for (i, j) in pairs_from_ranking(g)? {
            pairs += 1;
            correct += match s[i].total_cmp(&s[j]) {
                std::cmp::Ordering::Greater => 1.0,
                std::cmp::Ordering::Equal => 0.5,
                std::cmp::Ordering::Less => 0.0,
            };
        }
        if let Some(t) = kendall_tau(&s, &g.oracle_rewards) {
            tau_sum += t;
            tau_n += 1;
        }
        if let Some(table) = table {
            for (score, r) in s.iter().zip(&g.oracle_rewards) {
                let b = &mut buckets[table.bucket(*score) - 1];
                b.0 += 1;
                b.1 += score;
                b.2 += r;
            }
        }
    }
    let calibration = if table.is_some() {
        buckets
            .iter()
            .enumerate()
            .map(|(k, &(n, s, r))| BucketCalibration {
                bucket: k + 1,
                count: n,
                mean_score: (n > 0).then(|| s / n as f64),
                mean_oracle_reward: (n > 0).then(|| r / n as f64),
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(RmEval {
        groups: groups.len(),
        pairs,
        accuracy: if pairs == 0 { 0.5 } else { correct / pairs as f64 },
        kendall_tau: if tau_n == 0 { 0.0 } else { tau_sum / tau_n as f64 },
        calibration,
    })
}

const NUMBER_WORDS: [&str; BUCKETS] = ["one", "two", "three", "four", "five"];

/// Text-like label of bucket `k` in `1..=5`.
pub fn bucket_label(k: usize) -> String {
    format!("quality {} out of five", NUMBER_WORDS[k - 1])
}

/// Four quantile cut points splitting scores into five buckets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BucketTable {
    pub boundaries: [f64; BUCKETS - 1],
    pub labels: Vec<String>,
}

impl BucketTable {
    pub fn new(boundaries: [f64; BUCKETS - 1]) -> Result<Self, RewardError> {
        if boundaries.iter().any(|b| !b.is_finite()) || boundaries.windows(2).any(|w| w[0] > w[1]) {
            return Err(RewardError::InvalidArgument(format!("boundaries {boundaries:?}")));
        }
        Ok(Self {
            boundaries,
            labels: (1..=BUCKETS).map(bucket_label).collect(),
        })
    }

    /// Bucket `k` holds scores in `(b_{k−1}, b_k]`; a score on a boundary goes to the lower bucket.
    pub fn bucket(&self, score: f64) -> usize {
        1 + self.boundaries.iter().filter(|&&b| b < score).count()
    }

    pub fn label(&self, score: f64) -> &str {
        &self.labels[self.bucket(score) - 1]
    }
}

/// Empirical quantile table: `b_k` is the `⌈k·n/5⌉`-th smallest score.
pub fn quantize(scores: &[f64]) -> Result<BucketTable, RewardError> {
    if scores.len() < BUCKETS || scores.iter().any(|s| !s.is_finite()) {
        return Err(RewardError::InvalidArgument(format!("need at least {BUCKETS} finite scores")));
    }
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    let mut distinct = s.clone();
    distinct.dedup();
    if distinct.len() < BUCKETS {
        log::warn!("only {} distinct scores; bucket table is degenerate", distinct.len());
    }
    let n = s.len();
    let mut b = [0.0; BUCKETS - 1];
    for (k, slot) in b.iter_mut().enumerate() {
        *slot = s[((k + 1) * n).div_ceil(BUCKETS) - 1];
    }
    BucketTable::new(b)
}

/// Affine map to zero mean and unit variance over the fitting set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    /// A constant set gets `std = 1` so the map stays defined.
    pub fn fit(scores: &[f64]) -> Result<Self, RewardError> {
        if scores.is_empty() || scores.iter().any(|s| !s.is_finite()) {
            return Err(RewardError::InvalidArgument("standardizing needs finite scores".into()));
        }
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Ok(Self { mean, std })
    }

    pub fn apply(&self, s: f64) -> f64 {
        (s - self.mean) / self.std
    }

    pub fn apply_all(&self, scores: &[f64]) -> Vec<f64> {
        scores.iter().map(|&s| self.apply(s)).collect()
    }
}

/// One line of the score sidecar file, keyed by dataset record index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRecord {
    pub index: usize,
    pub score: f64,
}

pub fn score_records(scores: &[f64]) -> Vec<ScoreRecord> {
    scores.iter().enumerate().map(|(index, &score)| ScoreRecord { index, score }).collect()
}

/// Rebuilds the dense score vector; indices must be exactly `0..n`.
pub fn scores_from_records(records: &[ScoreRecord]) -> Result<Vec<f64>, RewardError> {
    let mut out = vec![f64::NAN; records.len()];
    for r in records {
        if r.index >= out.len() || !out[r.index].is_nan() || !r.score.is_finite() {
            return Err(RewardError::InvalidArgument(format!("score record {}", r.index)));
        }
        out[r.index] = r.score;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_loss_examples() {
        assert!((pairwise_loss(&[0.3, 0.3], &[(0, 1)]) - 2f64.ln()).abs() < 1e-15);
        assert!((pairwise_loss(&[3f64.ln(), 0.0], &[(0, 1)]) - (4.0f64 / 3.0).ln()).abs() < 1e-15);
        assert!(pairwise_loss(&[1000.0, -1000.0], &[(1, 0)]).is_finite());
    }

    #[test]
    fn quantize_one_to_ten() {
        let scores: Vec<f64> = (1..=10).map(f64::from).collect();
        let t = quantize(&scores).unwrap();
        assert_eq!(t.boundaries, [2.0, 4.0, 6.0, 8.0]);
        assert_eq!(t.bucket(2.0), 1);
        assert_eq!(t.bucket(4.0), 2);
        assert_eq!(t.bucket(4.5), 3);
        assert_eq!(t.bucket(100.0), 5);
        assert_eq!(t.label(1.0), "quality one out of five");
        assert_eq!(t.label(9.0), "quality five out of five");
    }

    #[test]
    fn constant_scores_fall_in_bucket_one() {
        let t = quantize(&[0.7; 12]).unwrap();
        assert_eq!(t.bucket(0.7), 1);
        assert!(quantize(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn kendall_examples() {
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(kendall_tau(&[1.0, 1.0], &[1.0, 2.0]), None);
    }

    #[test]
    fn standardizer_handles_constant_input() {
        let s = Standardizer::fit(&[2.0, 2.0]).unwrap();
        assert_eq!(s.apply(2.0), 0.0);
        let s = Standardizer::fit(&[1.0, 3.0]).unwrap();
        assert_eq!(s.apply_all(&[1.0, 3.0]), vec![-1.0, 1.0]);
    }

    #[test]
    fn score_records_round_trip() {
        let scores = vec![0.5, -1.0, 2.0];
        assert_eq!(scores_from_records(&score_records(&scores)).unwrap(), scores);
        let dup = vec![ScoreRecord { index: 0, score: 1.0 }, ScoreRecord { index: 0, score: 1.0 }];
        assert!(scores_from_records(&dup).is_err());
    }
}
