//! Preference data collection: variant generation, noisy oracle ranking,
//! non-rankable filters and expansion of rankings into ordered pairs.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{sample, DiffusionModel, Guidance};
use crate::numerics::{derive_seed, mix64, Rng};
use crate::worlds::{EditInstruction, PreferenceOracle, Sample, World, WorldError};

/// Variants per group.
pub const DEFAULT_K: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum PreferenceError {
    #[error("invalid group: {0}")]
    InvalidGroup(String),
    #[error("group is not ranked")]
    Unranked,
    #[error(transparent)]
    World(#[from] WorldError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterFlag {
    NoneFollow,
    AllUnchanged,
    OverEdited,
    DegenerateSimilar,
}

/// The `(input, instruction)` pair every variant in a group edits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupCondition {
    pub input: Sample,
    pub instruction: EditInstruction,
}

impl GroupCondition {
    /// Stable 64-bit key used to split data by condition.
    pub fn key(&self) -> u64 {
        let mut h = mix64(self.input.point[0].to_bits()) ^ mix64(self.input.point[1].to_bits().rotate_left(17));
        for b in self.instruction.text.bytes() {
            h = mix64(h ^ u64::from(b));
        }
        h
    }
}

/// One condition with `K` edited variants and their ranking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankedGroup {
    pub condition: GroupCondition,
    pub variants: Vec<Sample>,
    pub seeds: Vec<u64>,
    /// Noise-free oracle reward of each variant.
    pub oracle_rewards: Vec<f64>,
    /// Variant numbers `1..=K`, best first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranking: Option<Vec<usize>>,
    #[serde(default)]
    pub flags: BTreeSet<FilterFlag>,
}

impl RankedGroup {
    pub fn k(&self) -> usize {
        self.variants.len()
    }

    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty()
    }

    /// Checks the structural invariants; used after deserialization.
    pub fn validate(&self) -> Result<(), PreferenceError> {
        let k = self.k();
        if k < 2 {
            return Err(PreferenceError::InvalidGroup(format!("K = {k}")));
        }
        if self.seeds.len() != k || self.oracle_rewards.len() != k {
            return Err(PreferenceError::InvalidGroup("seeds and rewards must have one entry per variant".into()));
        }
        if self.oracle_rewards.iter().any(|r| !r.is_finite()) {
            return Err(PreferenceError::InvalidGroup("non-finite oracle reward".into()));
        }
        let world = self.condition.input.world;
        if self.variants.iter().any(|v| v.world != world) {
            return Err(PreferenceError::InvalidGroup("variants from another world".into()));
        }
        if let Some(r) = &self.ranking {
            let mut seen = vec![false; k];
            if r.len() != k {
                return Err(PreferenceError::InvalidGroup("ranking length".into()));
            }
            for &v in r {
                if v == 0 || v > k || seen[v - 1] {
                    return Err(PreferenceError::InvalidGroup(format!("ranking {r:?} is not a permutation of 1..={k}")));
                }
                seen[v - 1] = true;
            }
        }
        Ok(())
    }

    /// Position of each variant in the ranking (0 = best).
    pub fn positions(&self) -> Result<Vec<usize>, PreferenceError> {
        let r = self.ranking.as_ref().ok_or(PreferenceError::Unranked)?;
        let mut pos = vec![0; r.len()];
        for (p, &v) in r.iter().enumerate() {
            pos[v - 1] = p;
        }
        Ok(pos)
    }
}

/// Distance thresholds of the non-rankable filters, in world units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterThresholds {
    pub similar: f64,
    pub identity: f64,
    pub over_edited: f64,
    pub misaligned: f64,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            similar: 0.05,
            identity: 0.05,
            over_edited: 2.0,
            misaligned: 2.0,
        }
    }
}

/// Sampler settings used whenever the diffusion model generates edits.
///
/// Variants default to unguided sampling so they follow the model's own
/// conditional distribution, including its imitation of corrupted edits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub guidance: Guidance,
    pub steps: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            guidance: Guidance::NONE,
            steps: 100,
        }
    }
}

/// `K` edits of one condition; variant `i` is drawn with seed `derive_seed(base_seed, i)`.
pub fn generate_variants(
    model: &DiffusionModel,
    world: &World,
    input: &Sample,
    instruction: &EditInstruction,
    k: usize,
    sampler: SamplerConfig,
    base_seed: u64,
) -> Result<(Vec<Sample>, Vec<u64>), PreferenceError> {
    if k < 2 {
        return Err(PreferenceError::InvalidGroup(format!("K = {k}")));
    }
    world.check_instruction(instruction)?;
    let cond = model.inference_condition(input.point, instruction);
    let seeds: Vec<u64> = (0..k as u64).map(|i| derive_seed(base_seed, i)).collect();
    let variants = seeds
        .iter()
        .map(|&s| {
            let p = sample(model, &model.schedule, &cond, sampler.guidance, sampler.steps, &mut Rng::new(s));
            world.sample_at(p)
        })
        .collect();
    Ok((variants, seeds))
}

/// Sorts variants by `reward + N(0, σ_r²)`, best first; ties keep variant order.
pub fn rank_with_oracle(oracle: &PreferenceOracle, rewards: &[f64], rng: &mut Rng) -> Vec<usize> {
    let noisy: Vec<f64> = rewards
        .iter()
        .map(|r| if oracle.ranking_noise > 0.0 { r + oracle.ranking_noise * rng.normal() } else { *r })
        .collect();
    let mut order: Vec<usize> = (0..rewards.len()).collect();
    order.sort_by(|&a, &b| noisy[b].total_cmp(&noisy[a]).then(a.cmp(&b)));
    order.into_iter().map(|i| i + 1).collect()
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Flags a group that annotators could not meaningfully rank.
pub fn filter_nonrankable(
    world: &World,
    group: &RankedGroup,
    th: &FilterThresholds,
) -> Result<BTreeSet<FilterFlag>, PreferenceError> {
    let input = &group.condition.input;
    let instr = &group.condition.instruction;
    let v = &group.variants;
    let mut flags = BTreeSet::new();
    let mut spread = 0.0f64;
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            spread = spread.max(dist(v[i].point, v[j].point));
        }
    }
    if spread < th.similar {
        flags.insert(FilterFlag::DegenerateSimilar);
    }
    if v.iter().all(|x| dist(x.point, input.point) < th.identity) {
        flags.insert(FilterFlag::AllUnchanged);
    }
    let mut all_over = true;
    let mut none_follow = true;
    for x in v {
        all_over &= world.offtarget_distance(input, instr, x)? > th.over_edited;
        none_follow &= world.alignment_distance(input, instr, x)? > th.misaligned;
    }
    if all_over {
        flags.insert(FilterFlag::OverEdited);
    }
    if none_follow {
        flags.insert(FilterFlag::NoneFollow);
    }
    Ok(flags)
}

/// All `K(K−1)/2` ordered pairs `(better, worse)` as 0-based variant indices.
pub fn pairs_from_ranking(group: &RankedGroup) -> Result<Vec<(usize, usize)>, PreferenceError> {
    let r = group.ranking.as_ref().ok_or(PreferenceError::Unranked)?;
    let mut pairs = Vec::with_capacity(r.len() * (r.len() - 1) / 2);
    for a in 0..r.len() {
        for b in a + 1..r.len() {
            pairs.push((r[a] - 1, r[b] - 1));
        }
    }
    Ok(pairs)
}

/// Builds a scored, flagged (not yet ranked) group from explicit variants.
pub fn build_group(
    world: &World,
    oracle: &PreferenceOracle,
    condition: GroupCondition,
    variants: Vec<Sample>,
    seeds: Vec<u64>,
    th: &FilterThresholds,
) -> Result<RankedGroup, PreferenceError> {
    let oracle_rewards = variants
        .iter()
        .map(|v| oracle.reward(world, &condition.input, &condition.instruction, v))
        .collect::<Result<Vec<_>, _>>()?;
    let mut g = RankedGroup {
        condition,
        variants,
        seeds,
        oracle_rewards,
        ranking: None,
        flags: BTreeSet::new(),
    };
    g.validate()?;
    g.flags = filter_nonrankable(world, &g, th)?;
    Ok(g)
}

/// Draws `n` conditions and generates, scores and flags `K` variants for each.
/// Group `i` uses seed `derive_seed(base, i)`, so the result does not depend
/// on the number of workers.
pub fn generate_groups(
    model: &DiffusionModel,
    world: &World,
    oracle: &PreferenceOracle,
    n: usize,
    k: usize,
    sampler: SamplerConfig,
    th: &FilterThresholds,
    rng: &mut Rng,
) -> Result<Vec<RankedGroup>, PreferenceError> {
    let base = rng.next_u64();
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = Rng::new(derive_seed(base, i));
            let (input, instruction) = world.draw_condition(&mut r);
            let (variants, seeds) = generate_variants(model, world, &input, &instruction, k, sampler, r.next_u64())?;
            build_group(world, oracle, GroupCondition { input, instruction }, variants, seeds, th)
        })
        .collect()
}

/// Ranks every unflagged group with the noisy oracle; flagged groups stay unranked.
pub fn rank_groups(oracle: &PreferenceOracle, groups: &mut [RankedGroup], rng: &mut Rng) {
    let base = rng.next_u64();
    for (i, g) in groups.iter_mut().enumerate() {
        g.ranking = if g.is_flagged() {
            None
        } else {
            Some(rank_with_oracle(oracle, &g.oracle_rewards, &mut Rng::new(derive_seed(base, i as u64))))
        };
    }
}

/// Groups usable for reward training: unflagged and ranked.
pub fn rankable(groups: &[RankedGroup]) -> Vec<RankedGroup> {
    groups.iter().filter(|g| !g.is_flagged() && g.ranking.is_some()).cloned().collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterStats {
    pub groups: usize,
    pub flagged: usize,
    pub none_follow: usize,
    pub all_unchanged: usize,
    pub over_edited: usize,
    pub degenerate_similar: usize,
}

impl FilterStats {
    pub fn of(groups: &[RankedGroup]) -> Self {
        let count = |f| groups.iter().filter(|g| g.flags.contains(&f)).count();
        Self {
            groups: groups.len(),
            flagged: groups.iter().filter(|g| g.is_flagged()).count(),
            none_follow: count(FilterFlag::NoneFollow),
            all_unchanged: count(FilterFlag::AllUnchanged),
            over_edited: count(FilterFlag::OverEdited),
            degenerate_similar: count(FilterFlag::DegenerateSimilar),
        }
    }

    pub fn flagged_fraction(&self) -> f64 {
        if self.groups == 0 {
            0.0
        } else {
            self.flagged as f64 / self.groups as f64
        }
    }
}

/// Ranked groups whose variants scatter around the correct edit and whose
/// ranking comes from `scorer` plus Gaussian noise. Used to test reward
/// learning against a known preference function.
pub fn synthetic_groups<F>(
    world: &World,
    n: usize,
    k: usize,
    spread: f64,
    noise: f64,
    scorer: F,
    rng: &mut Rng,
) -> Result<Vec<RankedGroup>, PreferenceError>
where
    F: Fn(&Sample, &EditInstruction, &Sample) -> f64,
{
    if k < 2 {
        return Err(PreferenceError::InvalidGroup(format!("K = {k}")));
    }
    let ranker = PreferenceOracle {
        ranking_noise: noise,
        ..PreferenceOracle::default()
    };
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let (input, instruction) = world.draw_condition(rng);
        let center = world.true_edit_mean(&input, &instruction)?.point;
        let seeds: Vec<u64> = (0..k).map(|_| rng.next_u64()).collect();
        let variants: Vec<Sample> = seeds
            .iter()
            .map(|&s| {
                let e = Rng::new(s).normal2();
                world.sample_at([center[0] + spread * e[0], center[1] + spread * e[1]])
            })
            .collect();
        let oracle_rewards: Vec<f64> = variants.iter().map(|v| scorer(&input, &instruction, v)).collect();
        let ranking = rank_with_oracle(&ranker, &oracle_rewards, rng);
        out.push(RankedGroup {
            condition: GroupCondition { input, instruction },
            variants,
            seeds,
            oracle_rewards,
            ranking: Some(ranking),
            flags: BTreeSet::new(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worlds::Object;

    fn group(points: &[[f64; 2]], input: [f64; 2], instr: EditInstruction) -> RankedGroup {
        let world = World::continuous();
        build_group(
            &world,
            &PreferenceOracle::default(),
            GroupCondition {
                input: Sample::continuous(input),
                instruction: instr,
            },
            points.iter().map(|p| Sample::continuous(*p)).collect(),
            (0..points.len() as u64).collect(),
            &FilterThresholds::default(),
        )
        .unwrap()
    }

    #[test]
    fn noiseless_ranking_is_exact_order() {
        let oracle = PreferenceOracle::new(1.0, 0.5, 0.0).unwrap();
        let r = rank_with_oracle(&oracle, &[-3.0, 0.0, -1.0, -0.5], &mut Rng::new(0));
        assert_eq!(r, vec![2, 4, 3, 1]);
    }

    #[test]
    fn ties_break_by_index() {
        let oracle = PreferenceOracle::new(1.0, 0.5, 0.0).unwrap();
        assert_eq!(rank_with_oracle(&oracle, &[0.0; 5], &mut Rng::new(0)), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn copies_of_input_are_flagged() {
        let instr = EditInstruction::translate(Object::Point, "right", 1.0).unwrap();
        let g = group(&[[0.5, 0.5]; 5], [0.5, 0.5], instr);
        assert!(g.flags.contains(&FilterFlag::AllUnchanged));
        assert!(g.flags.contains(&FilterFlag::DegenerateSimilar));
    }

    #[test]
    fn identical_perfect_edits_are_similar_but_followed() {
        let instr = EditInstruction::translate(Object::Point, "right", 1.0).unwrap();
        let g = group(&[[1.5, 0.5]; 5], [0.5, 0.5], instr);
        assert!(g.flags.contains(&FilterFlag::DegenerateSimilar));
        assert!(!g.flags.contains(&FilterFlag::NoneFollow));
        assert!(!g.flags.contains(&FilterFlag::AllUnchanged));
    }

    #[test]
    fn pair_counts() {
        let instr = EditInstruction::keep(Object::Point);
        for k in [2, 3, 5] {
            let pts: Vec<[f64; 2]> = (0..k).map(|i| [i as f64 * 0.3, 0.0]).collect();
            let mut g = group(&pts, [0.0, 0.0], instr.clone());
            assert!(matches!(pairs_from_ranking(&g), Err(PreferenceError::Unranked)));
            g.ranking = Some((1..=k).rev().collect());
            assert_eq!(pairs_from_ranking(&g).unwrap().len(), k * (k - 1) / 2);
        }
    }

    #[test]
    fn validate_rejects_bad_rankings() {
        let instr = EditInstruction::keep(Object::Point);
        let mut g = group(&[[0.0, 0.0], [1.0, 0.0]], [0.0, 0.0], instr);
        g.ranking = Some(vec![1, 1]);
        assert!(g.validate().is_err());
        g.ranking = Some(vec![2, 1]);
        assert!(g.validate().is_ok());
        g.ranking = Some(vec![0, 1]);
        assert!(g.validate().is_err());
    }
}
