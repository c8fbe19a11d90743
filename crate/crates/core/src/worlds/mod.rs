//! Synthetic editing worlds: a continuous 2D mixture world and a finite grid
//! world, their edit operators, a corrupting dataset generator and the
//! synthetic preference oracle that stands in for annotators.

mod types;
mod world;

use serde::{Deserialize, Serialize};

pub use types::{
    EditInstruction, Object, Provenance, Sample, Triplet, Verb, WorldId, BOX_HALF_WIDTH, INSTRUCTION_SLOTS,
};
pub use world::{
    grid_point, nearest_state, ContinuousWorld, Corruption, DiscreteTables, DiscreteWorld, World, DISCRETE_STATES,
};

#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error("unsupported instruction: {0}")]
    UnsupportedInstruction(String),
    #[error("unsupported: {0}")]
    Unsupported(&'static str),
    #[error("cannot parse instruction {0:?}")]
    Parse(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Deterministic scorer standing in for human preference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceOracle {
    pub alignment_weight: f64,
    pub fidelity_weight: f64,
    /// Standard deviation of the score noise applied at ranking time only.
    pub ranking_noise: f64,
}

impl Default for PreferenceOracle {
    fn default() -> Self {
        Self {
            alignment_weight: 1.0,
            fidelity_weight: 0.5,
            ranking_noise: 0.1,
        }
    }
}

/// The two penalty terms of the oracle reward, each `<= 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardParts {
    pub alignment: f64,
    pub fidelity: f64,
}

impl RewardParts {
    pub fn total(&self) -> f64 {
        self.alignment + self.fidelity
    }
}

impl PreferenceOracle {
    pub fn new(alignment_weight: f64, fidelity_weight: f64, ranking_noise: f64) -> Result<Self, WorldError> {
        if !(alignment_weight > 0.0 && fidelity_weight > 0.0 && ranking_noise >= 0.0) {
            return Err(WorldError::InvalidArgument(format!(
                "oracle weights ({alignment_weight}, {fidelity_weight}, {ranking_noise})"
            )));
        }
        Ok(Self {
            alignment_weight,
            fidelity_weight,
            ranking_noise,
        })
    }

    pub fn reward_parts(
        &self,
        world: &World,
        input: &Sample,
        instr: &EditInstruction,
        edited: &Sample,
    ) -> Result<RewardParts, WorldError> {
        let a = world.alignment_distance(input, instr, edited)?;
        let f = world.offtarget_distance(input, instr, edited)?;
        Ok(RewardParts {
            alignment: -self.alignment_weight * a * a,
            fidelity: -self.fidelity_weight * f * f,
        })
    }

    /// `-λa·d(edited, target)² - λf·d_off(edited, input)²`; zero only on perfect edits.
    pub fn reward(&self, world: &World, input: &Sample, instr: &EditInstruction, edited: &Sample) -> Result<f64, WorldError> {
        Ok(self.reward_parts(world, input, instr, edited)?.total())
    }

    pub fn reward_triplet(&self, world: &World, t: &Triplet) -> Result<f64, WorldError> {
        self.reward(world, &t.input, &t.instruction, &t.edited)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn zero_jitter() -> World {
        World::Continuous(ContinuousWorld {
            jitter: 0.0,
            ..ContinuousWorld::default()
        })
    }

    #[test]
    fn keep_is_identity() {
        let w = zero_jitter();
        let mut rng = Rng::new(0);
        for p in [[0.3, -1.2], [3.9, 3.9], [-2.0, 0.0]] {
            let x = Sample::continuous(p);
            for o in Object::ALL {
                assert_eq!(w.true_edit(&x, &EditInstruction::keep(o), &mut rng).unwrap(), x);
            }
        }
    }

    #[test]
    fn translate_right_from_origin() {
        let w = zero_jitter();
        let instr = EditInstruction::parse("translate the point right by 1.0").unwrap();
        let out = w.true_edit(&Sample::continuous([0.0, 0.0]), &instr, &mut Rng::new(1)).unwrap();
        assert_eq!(out.point, [1.0, 0.0]);
    }

    #[test]
    fn reflect_across_y_axis() {
        let w = zero_jitter();
        let out = w
            .true_edit(&Sample::continuous([0.7, -0.3]), &EditInstruction::reflect(Object::Point), &mut Rng::new(2))
            .unwrap();
        assert_eq!(out.point, [-0.7, -0.3]);
    }

    #[test]
    fn discrete_world_rejects_cluster_edits() {
        let w = World::discrete();
        let x = w.sample_at([1.0, 1.0]);
        let err = w.true_edit(&x, &EditInstruction::recolor(Object::Cluster), &mut Rng::new(0));
        assert!(matches!(err, Err(WorldError::UnsupportedInstruction(_))));
    }

    #[test]
    fn oracle_reward_examples() {
        let w = World::continuous();
        let o = PreferenceOracle::default();
        let instr = EditInstruction::parse("translate the point right by 1.0").unwrap();
        let x = Sample::continuous([0.0, 0.0]);
        let perfect = Sample::continuous([1.0, 0.0]);
        assert_eq!(o.reward(&w, &x, &instr, &perfect).unwrap(), 0.0);
        assert_eq!(o.reward(&w, &x, &instr, &x).unwrap(), -1.0);
        // Vertical drift is both misaligned and off-target.
        let drift = Sample::continuous([1.0, 0.5]);
        assert!((o.reward(&w, &x, &instr, &drift).unwrap() - (-0.25 - 0.5 * 0.25)).abs() < 1e-15);
    }

    #[test]
    fn oracle_rejects_nonpositive_weights() {
        assert!(PreferenceOracle::new(0.0, 0.5, 0.1).is_err());
        assert!(PreferenceOracle::new(1.0, 0.5, -0.1).is_err());
        assert!(PreferenceOracle::new(1.0, 0.5, 0.0).is_ok());
    }

    #[test]
    fn tables_error_on_continuous_world() {
        assert!(matches!(
            World::continuous().discrete_world_tables(0.3),
            Err(WorldError::Unsupported(_))
        ));
    }

    #[test]
    fn uniform_world_rows_are_uniform() {
        let w = World::Discrete(DiscreteWorld {
            uniform_edits: true,
            ..DiscreteWorld::default()
        });
        for rate in [0.0, 0.3, 1.0] {
            for row in w.discrete_world_tables(rate).unwrap().rows {
                for p in row {
                    assert!((p - 1.0 / DISCRETE_STATES as f64).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn table_rows_are_distributions() {
        let w = World::discrete();
        for rate in [0.0, 0.3, 0.7, 1.0] {
            for row in w.discrete_world_tables(rate).unwrap().rows {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&p| p >= 0.0));
            }
        }
    }

    #[test]
    fn zero_corruption_gives_true_edits() {
        let w = zero_jitter();
        let data = w.generate_dataset(300, 0.0, &mut Rng::new(5)).unwrap();
        for t in &data {
            assert_eq!(t.provenance, Provenance::Clean);
            let mean = w.true_edit_mean(&t.input, &t.instruction).unwrap();
            assert_eq!(t.edited, mean);
        }
    }

    #[test]
    fn full_corruption_has_no_clean_records() {
        let data = World::continuous().generate_dataset(1000, 1.0, &mut Rng::new(6)).unwrap();
        assert!(data.iter().all(|t| t.provenance == Provenance::Corrupted));
    }

    #[test]
    fn clean_fraction_within_binomial_interval() {
        let data = World::continuous().generate_dataset(10_000, 0.3, &mut Rng::new(7)).unwrap();
        let clean = data.iter().filter(|t| t.provenance == Provenance::Clean).count() as f64 / 1e4;
        assert!((0.67..=0.73).contains(&clean), "{clean}");
    }

    #[test]
    fn generation_rejects_bad_arguments() {
        let w = World::continuous();
        assert!(w.generate_dataset(0, 0.3, &mut Rng::new(0)).is_err());
        assert!(w.generate_dataset(10, 1.5, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn samples_stay_in_box() {
        let data = World::continuous().generate_dataset(5000, 0.5, &mut Rng::new(8)).unwrap();
        for t in &data {
            for p in [t.input.point, t.edited.point] {
                assert!(p.iter().all(|v| v.abs() <= BOX_HALF_WIDTH));
            }
        }
    }
}
