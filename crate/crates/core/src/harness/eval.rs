use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::diffusion::{sample, DiffusionModel, Guidance};
use crate::numerics::{derive_seed, Rng};
use crate::preference::{FilterThresholds, GroupCondition};
use crate::worlds::{PreferenceOracle, Verb, World};

/// Version of the metrics.csv column layout.
pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// One evaluation of one model at one guidance setting.
///
/// `alignment` and `fidelity` are the mean oracle penalty terms (higher is
/// better); success means alignment distance below the misalignment threshold
/// and off-target displacement below the over-edit threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub schema_version: u32,
    pub model_id: String,
    pub guidance_image: f64,
    pub guidance_instruction: f64,
    pub conditions: usize,
    pub samples: usize,
    pub alignment: f64,
    pub fidelity: f64,
    pub reward: f64,
    pub success_rate: f64,
    pub success_translate: Option<f64>,
    pub success_reflect: Option<f64>,
    pub success_scale: Option<f64>,
    pub success_recolor: Option<f64>,
    pub success_keep: Option<f64>,
}

impl MetricsRow {
    pub fn verb_success(&self, verb: Verb) -> Option<f64> {
        match verb {
            Verb::Translate => self.success_translate,
            Verb::Reflect => self.success_reflect,
            Verb::Scale => self.success_scale,
            Verb::Recolor => self.success_recolor,
            Verb::Keep => self.success_keep,
        }
    }
}

/// Evaluation conditions drawn from the world; condition `i` uses `derive_seed(seed, i)`.
pub fn eval_conditions(world: &World, n: usize, seed: u64) -> Vec<GroupCondition> {
    (0..n as u64)
        .map(|i| {
            let (input, instruction) = world.draw_condition(&mut Rng::new(derive_seed(seed, i)));
            GroupCondition { input, instruction }
        })
        .collect()
}

struct SampleOutcome {
    alignment: f64,
    fidelity: f64,
    success: bool,
}

/// Samples `per_condition` edits of every condition. Seeds depend on the
/// condition's key and the sample index, never on list position, so results
/// are invariant to the order conditions are given in.
fn outcomes(
    model: &DiffusionModel,
    world: &World,
    oracle: &PreferenceOracle,
    conditions: &[GroupCondition],
    guidance: Guidance,
    per_condition: usize,
    steps: usize,
    seed: u64,
    th: &FilterThresholds,
) -> Result<Vec<Vec<SampleOutcome>>, HarnessError> {
    conditions
        .par_iter()
        .map(|c| {
            let cond = model.inference_condition(c.input.point, &c.instruction);
            let base = derive_seed(seed, c.key());
            (0..per_condition as u64)
                .map(|j| {
                    let p = sample(model, &model.schedule, &cond, guidance, steps, &mut Rng::new(derive_seed(base, j)));
                    let edited = world.sample_at(p);
                    let parts = oracle.reward_parts(world, &c.input, &c.instruction, &edited)?;
                    let a = world.alignment_distance(&c.input, &c.instruction, &edited)?;
                    let f = world.offtarget_distance(&c.input, &c.instruction, &edited)?;
                    Ok(SampleOutcome {
                        alignment: parts.alignment,
                        fidelity: parts.fidelity,
                        success: a < th.misaligned && f < th.over_edited,
                    })
                })
                .collect::<Result<Vec<_>, HarnessError>>()
        })
        .collect()
}

/// Indices of `conditions` sorted by key, so sums run in a fixed order.
fn canonical_order(conditions: &[GroupCondition]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..conditions.len()).collect();
    idx.sort_by_key(|&i| (conditions[i].key(), i));
    idx
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    model: &DiffusionModel,
    model_id: &str,
    world: &World,
    oracle: &PreferenceOracle,
    conditions: &[GroupCondition],
    sweep: &[Guidance],
    per_condition: usize,
    steps: usize,
    seed: u64,
    th: &FilterThresholds,
) -> Result<Vec<MetricsRow>, HarnessError> {
    if conditions.is_empty() || per_condition == 0 {
        return Err(HarnessError::InvalidArgument("evaluation needs conditions and samples".into()));
    }
    let order = canonical_order(conditions);
    let mut rows = Vec::with_capacity(sweep.len());
    for &g in sweep {
        let out = outcomes(model, world, oracle, conditions, g, per_condition, steps, seed, th)?;
        let (mut al, mut fi, mut ok, mut n) = (0.0, 0.0, 0usize, 0usize);
        let mut per_verb = [(0usize, 0usize); Verb::ALL.len()];
        for &i in &order {
            let v = conditions[i].instruction.verb.index();
            for s in &out[i] {
                al += s.alignment;
                fi += s.fidelity;
                n += 1;
                per_verb[v].1 += 1;
                if s.success {
                    ok += 1;
                    per_verb[v].0 += 1;
                }
            }
        }
        let rate = |v: Verb| {
            let (k, m) = per_verb[v.index()];
            (m > 0).then(|| k as f64 / m as f64)
        };
        let nf = n as f64;
        rows.push(MetricsRow {
            schema_version: METRICS_SCHEMA_VERSION,
            model_id: model_id.to_string(),
            guidance_image: g.image,
            guidance_instruction: g.instruction,
            conditions: conditions.len(),
            samples: n,
            alignment: al / nf,
            fidelity: fi / nf,
            reward: (al + fi) / nf,
            success_rate: ok as f64 / nf,
            success_translate: rate(Verb::Translate),
            success_reflect: rate(Verb::Reflect),
            success_scale: rate(Verb::Scale),
            success_recolor: rate(Verb::Recolor),
            success_keep: rate(Verb::Keep),
        });
    }
    Ok(rows)
}

/// Mean oracle reward per condition for one model; the unit of paired comparisons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionScores {
    pub model_id: String,
    pub guidance: Guidance,
    pub keys: Vec<u64>,
    pub rewards: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn condition_scores(
    model: &DiffusionModel,
    model_id: &str,
    world: &World,
    oracle: &PreferenceOracle,
    conditions: &[GroupCondition],
    guidance: Guidance,
    per_condition: usize,
    steps: usize,
    seed: u64,
) -> Result<ConditionScores, HarnessError> {
    if conditions.is_empty() || per_condition == 0 {
        return Err(HarnessError::InvalidArgument("comparison needs conditions and samples".into()));
    }
    let th = FilterThresholds::default();
    let out = outcomes(model, world, oracle, conditions, guidance, per_condition, steps, seed, &th)?;
    Ok(ConditionScores {
        model_id: model_id.to_string(),
        guidance,
        keys: conditions.iter().map(GroupCondition::key).collect(),
        rewards: out
            .iter()
            .map(|s| s.iter().map(|o| o.alignment + o.fidelity).sum::<f64>() / s.len() as f64)
            .collect(),
    })
}

/// Default width of the tie band in oracle-reward units.
pub const TIE_BAND: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub treatment: String,
    pub conditions: usize,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
    pub win_rate: f64,
    pub tie_rate: f64,
    pub loss_rate: f64,
    /// `(wins − losses) / conditions`.
    pub net_win_rate: f64,
    pub net_win_ci: [f64; 2],
    pub mean_delta: f64,
    pub mean_delta_ci: [f64; 2],
}

impl Comparison {
    pub fn significant_gain(&self) -> bool {
        self.net_win_ci[0] > 0.0
    }
}

fn percentile_ci(mut v: Vec<f64>) -> [f64; 2] {
    v.sort_by(f64::total_cmp);
    let at = |q: f64| v[((q * (v.len() - 1) as f64).round() as usize).min(v.len() - 1)];
    [at(0.025), at(0.975)]
}

/// Paired per-condition comparison with percentile-bootstrap 95% CIs over conditions.
pub fn compare(
    baseline: &ConditionScores,
    treatment: &ConditionScores,
    tie_band: f64,
    resamples: usize,
    rng: &mut Rng,
) -> Result<Comparison, HarnessError> {
    if baseline.keys != treatment.keys || baseline.rewards.len() != treatment.rewards.len() {
        return Err(HarnessError::Mismatch("condition sets differ".into()));
    }
    let n = baseline.keys.len();
    if n == 0 || resamples == 0 {
        return Err(HarnessError::InvalidArgument("comparison needs conditions and resamples".into()));
    }
    let delta: Vec<f64> = treatment.rewards.iter().zip(&baseline.rewards).map(|(t, b)| t - b).collect();
    let outcome: Vec<i32> = delta
        .iter()
        .map(|&d| if d > tie_band { 1 } else if d < -tie_band { -1 } else { 0 })
        .collect();
    let wins = outcome.iter().filter(|&&o| o == 1).count();
    let losses = outcome.iter().filter(|&&o| o == -1).count();
    let ties = n - wins - losses;
    let nf = n as f64;
    let mut net_samples = Vec::with_capacity(resamples);
    let mut delta_samples = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let (mut net, mut d) = (0i64, 0.0);
        for _ in 0..n {
            let i = rng.below(n);
            net += i64::from(outcome[i]);
            d += delta[i];
        }
        net_samples.push(net as f64 / nf);
        delta_samples.push(d / nf);
    }
    Ok(Comparison {
        baseline: baseline.model_id.clone(),
        treatment: treatment.model_id.clone(),
        conditions: n,
        wins,
        ties,
        losses,
        win_rate: wins as f64 / nf,
        tie_rate: ties as f64 / nf,
        loss_rate: losses as f64 / nf,
        net_win_rate: (wins as f64 - losses as f64) / nf,
        net_win_ci: percentile_ci(net_samples),
        mean_delta: delta.iter().sum::<f64>() / nf,
        mean_delta_ci: percentile_ci(delta_samples),
    })
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(x: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
        let mut r = vec![0.0; x.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
                j += 1;
            }
            for k in i..=j {
                r[idx[k]] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
