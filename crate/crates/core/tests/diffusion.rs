use editlab_core::diffusion::{
    denoising_loss_value, forward_noise, guided_eps, sample, sample_many, train_sft, Condition, DenoisingRecord,
    DiffusionModel, EpsPredictor, Guidance, LossOptions, NoiseSchedule, ScheduleConfig, TrainConfig,
};
use editlab_core::numerics::{derive_seed, Rng};
use editlab_core::oracle::{tv, DiscreteDistribution};
use editlab_core::worlds::{nearest_state, EditInstruction, Object, Provenance, Sample, Triplet, World};
use proptest::prelude::*;

fn schedule() -> NoiseSchedule {
    NoiseSchedule::new(ScheduleConfig::default()).unwrap()
}

/// Exact noise predictor for data concentrated at the origin.
struct PointMass(NoiseSchedule);

impl EpsPredictor for PointMass {
    fn predict(&self, z: [f64; 2], t: usize, _: &Condition) -> [f64; 2] {
        let s = (1.0 - self.0.alpha_bar(t)).sqrt();
        [z[0] / s, z[1] / s]
    }
}

struct Zero;

impl EpsPredictor for Zero {
    fn predict(&self, _: [f64; 2], _: usize, _: &Condition) -> [f64; 2] {
        [0.0; 2]
    }
}

/// Ignores its condition and always queries the unconditional branch.
struct Unconditional<'a>(&'a DiffusionModel);

impl EpsPredictor for Unconditional<'_> {
    fn predict(&self, z: [f64; 2], t: usize, _: &Condition) -> [f64; 2] {
        self.0.predict(z, t, &Condition::NULL)
    }
}

fn records_at_origin(n: usize) -> Vec<DenoisingRecord> {
    let instr = EditInstruction::keep(Object::Point);
    let t = Triplet {
        input: Sample::continuous([0.0, 0.0]),
        instruction: instr,
        edited: Sample::continuous([0.0, 0.0]),
        provenance: Provenance::Clean,
        seed: 0,
    };
    vec![DenoisingRecord::from_triplet(&t); n]
}

#[test]
fn exact_predictor_has_zero_loss() {
    let s = schedule();
    let loss = denoising_loss_value(&PointMass(s.clone()), &s, &records_at_origin(500), None, LossOptions::default(), &mut Rng::new(1))
        .unwrap();
    assert!(loss < 1e-20, "{loss}");
}

#[test]
fn zero_predictor_loss_is_noise_dimension() {
    let s = schedule();
    let loss = denoising_loss_value(&Zero, &s, &records_at_origin(20_000), None, LossOptions::default(), &mut Rng::new(2)).unwrap();
    // Chi-square with 2 degrees of freedom: variance 4, so the standard error is 2/sqrt(n).
    assert!((loss - 2.0).abs() < 5.0 * 2.0 / (20_000f64).sqrt(), "{loss}");
}

#[test]
fn exact_point_mass_samples_concentrate_at_origin() {
    let s = schedule();
    let stub = PointMass(s.clone());
    let conds = vec![Condition::NULL; 1000];
    let pts = sample_many(&stub, &s, &conds, Guidance::NONE, 100, 3);
    let mean_norm = pts.iter().map(|p| p[0].hypot(p[1])).sum::<f64>() / pts.len() as f64;
    assert!(mean_norm < 0.1, "{mean_norm}");
}

#[test]
fn nulled_conditions_reduce_to_the_unconditional_chain() {
    let model = DiffusionModel::new(&[16, 16], schedule(), &mut Rng::new(4)).unwrap();
    let instr = EditInstruction::translate(Object::Point, "right", 1.0).unwrap();
    let cond = Condition::new([0.5, -1.0], &instr);
    for seed in 0..20 {
        let a = sample(&model, &model.schedule, &Condition::NULL, Guidance::NONE, 100, &mut Rng::new(seed));
        let b = sample(&Unconditional(&model), &model.schedule, &cond, Guidance::NONE, 100, &mut Rng::new(seed));
        let c = sample(&model, &model.schedule, &Condition::NULL, Guidance::default(), 100, &mut Rng::new(seed));
        assert_eq!(a, b);
        assert_eq!(a, c);
    }
}

#[test]
fn single_point_is_memorized() {
    let world = World::continuous();
    let data = world.generate_dataset(1, 0.0, &mut Rng::new(5)).unwrap();
    let cfg = TrainConfig {
        hidden: vec![64, 64],
        steps: 3000,
        batch_size: 64,
        holdout_fraction: 0.0,
        ..TrainConfig::default()
    };
    let (_, report) = train_sft(&data, &cfg, &mut Rng::new(6)).unwrap();
    assert!(report.heldout_final < 0.05, "{report:?}");
}

fn per_condition_tv(model: &DiffusionModel, world: &World, rate: f64, n: usize, seed: u64) -> Vec<f64> {
    let tables = world.discrete_world_tables(rate).unwrap();
    let clean = world.discrete_world_tables(0.0).unwrap();
    tables
        .conditions
        .iter()
        .enumerate()
        .map(|(ci, (state, instr))| {
            let cond = model.inference_condition(tables.support[*state], instr);
            let pts = sample_many(model, &model.schedule, &vec![cond; n], Guidance::NONE, 100, derive_seed(seed, ci as u64));
            let mut counts = vec![0.0; tables.support.len()];
            for p in pts {
                counts[nearest_state(p)] += 1.0;
            }
            let empirical = DiscreteDistribution::normalized(counts).unwrap();
            tv(&DiscreteDistribution::new(clean.rows[ci].clone()).unwrap(), &empirical).unwrap()
        })
        .collect()
}

#[test]
fn trained_model_matches_clean_discrete_conditionals_and_corruption_hurts() {
    let world = World::discrete();
    let clean_data = world.generate_dataset(8000, 0.0, &mut Rng::new(7)).unwrap();
    let corrupt_data = world.generate_dataset(8000, 0.3, &mut Rng::new(7)).unwrap();
    let (clean, _) = train_sft(&clean_data, &TrainConfig::default(), &mut Rng::new(8)).unwrap();
    let (corrupt, _) = train_sft(&corrupt_data, &TrainConfig::default(), &mut Rng::new(8)).unwrap();
    let tv_clean = per_condition_tv(&clean, &world, 0.0, 2_000, 9);
    let tv_corrupt = per_condition_tv(&corrupt, &world, 0.0, 2_000, 9);
    assert!(tv_clean.iter().all(|&d| d <= 0.15), "{tv_clean:?}");
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&tv_corrupt) > mean(&tv_clean), "{tv_corrupt:?} vs {tv_clean:?}");
}

proptest! {
    #[test]
    fn forward_noise_matches_closed_form(x in -4.0..4.0f64, y in -4.0..4.0f64, e0 in -3.0..3.0f64, e1 in -3.0..3.0f64, t in 1usize..=100) {
        let s = schedule();
        let z = forward_noise(&s, [x, y], t, [e0, e1]).unwrap();
        let ab = s.alpha_bar(t);
        prop_assert!((z[0] - (ab.sqrt() * x + (1.0 - ab).sqrt() * e0)).abs() < 1e-12);
        prop_assert!((z[1] - (ab.sqrt() * y + (1.0 - ab).sqrt() * e1)).abs() < 1e-12);
    }

    #[test]
    fn unit_guidance_is_the_conditional_prediction(seed in any::<u64>(), zx in -3.0..3.0f64, zy in -3.0..3.0f64, t in 1usize..=100) {
        let model = DiffusionModel::new(&[8], schedule(), &mut Rng::new(seed)).unwrap();
        let instr = EditInstruction::reflect(Object::Cluster);
        let cond = Condition::new([zy, zx], &instr).with_bucket(Some(3));
        prop_assert_eq!(guided_eps(&model, [zx, zy], t, &cond, Guidance::NONE), model.predict([zx, zy], t, &cond));
    }

    #[test]
    fn sampling_is_deterministic_and_bounded(seed in any::<u64>(), si in 0.0..3.0f64, se in 0.0..10.0f64) {
        let model = DiffusionModel::new(&[8], schedule(), &mut Rng::new(seed)).unwrap();
        let cond = Condition::new([1.0, 1.0], &EditInstruction::recolor(Object::Point));
        let g = Guidance::new(si, se).unwrap();
        let a = sample(&model, &model.schedule, &cond, g, 25, &mut Rng::new(seed ^ 1));
        let b = sample(&model, &model.schedule, &cond, g, 25, &mut Rng::new(seed ^ 1));
        prop_assert_eq!(a, b);
        prop_assert!(a.iter().all(|v| v.is_finite() && v.abs() < 10.0));
    }
}
