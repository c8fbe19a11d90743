use serde::{Deserialize, Serialize};

use super::types::{EditInstruction, Object, Provenance, Sample, Triplet, Verb, WorldId, BOX_HALF_WIDTH};
use super::WorldError;
use crate::numerics::{derive_seed, Rng};

/// Gaussian-mixture plane with two components ("colors").
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuousWorld {
    pub centers: [[f64; 2]; 2],
    /// Standard deviation of each input component.
    pub spread: f64,
    /// Standard deviation of the noise a correct edit adds around its target.
    pub jitter: f64,
}

impl Default for ContinuousWorld {
    fn default() -> Self {
        Self {
            centers: [[-2.0, 0.0], [2.0, 0.0]],
            spread: 0.6,
            jitter: 0.1,
        }
    }
}

/// 4x4 grid of states at coordinates {-3, -1, 1, 3}², with a fixed list of
/// (input state, instruction) conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteWorld {
    pub conditions: Vec<(usize, EditInstruction)>,
    /// Every edit (clean or corrupted) lands uniformly on the support.
    #[serde(default)]
    pub uniform_edits: bool,
}

pub const GRID_SIDE: usize = 4;
pub const DISCRETE_STATES: usize = GRID_SIDE * GRID_SIDE;
const GRID_STEP: f64 = 2.0;
const GRID_EDGE: f64 = 3.0;

pub fn grid_point(state: usize) -> [f64; 2] {
    let (row, col) = (state / GRID_SIDE, state % GRID_SIDE);
    [-GRID_EDGE + GRID_STEP * col as f64, -GRID_EDGE + GRID_STEP * row as f64]
}

/// Nearest grid state, clamping points outside the grid onto its edge.
pub fn nearest_state(p: [f64; 2]) -> usize {
    let idx = |v: f64| (((v.clamp(-GRID_EDGE, GRID_EDGE) + GRID_EDGE) / GRID_STEP).round() as usize).min(GRID_SIDE - 1);
    idx(p[1]) * GRID_SIDE + idx(p[0])
}

fn state_at(col: usize, row: usize) -> usize {
    row * GRID_SIDE + col
}

impl Default for DiscreteWorld {
    fn default() -> Self {
        let t = |dir: &str| EditInstruction::translate(Object::Point, dir, GRID_STEP).unwrap();
        Self {
            conditions: vec![
                (state_at(0, 0), t("right")),
                (state_at(1, 2), t("up")),
                (state_at(2, 2), t("left")),
                (state_at(3, 1), t("down")),
                (state_at(0, 2), EditInstruction::reflect(Object::Point)),
                (state_at(2, 0), EditInstruction::reflect(Object::Point)),
                (state_at(1, 1), EditInstruction::keep(Object::Point)),
                (state_at(3, 3), t("left")),
            ],
            uniform_edits: false,
        }
    }
}

impl DiscreteWorld {
    /// Every instruction the discrete world understands.
    pub fn catalog() -> Vec<EditInstruction> {
        let mut v: Vec<EditInstruction> = ["right", "left", "up", "down"]
            .iter()
            .map(|d| EditInstruction::translate(Object::Point, d, GRID_STEP).unwrap())
            .collect();
        v.push(EditInstruction::reflect(Object::Point));
        v.push(EditInstruction::keep(Object::Point));
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum World {
    Continuous(ContinuousWorld),
    Discrete(DiscreteWorld),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Corruption {
    WrongEdit,
    Exaggerated,
    OffTarget,
}

impl Corruption {
    pub const ALL: [Corruption; 3] = [Corruption::WrongEdit, Corruption::Exaggerated, Corruption::OffTarget];
}

fn add(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] + b[0], a[1] + b[1]]
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn scale(a: [f64; 2], s: f64) -> [f64; 2] {
    [a[0] * s, a[1] * s]
}

fn norm(a: [f64; 2]) -> f64 {
    a[0].hypot(a[1])
}

fn clamp_box(p: [f64; 2]) -> [f64; 2] {
    [p[0].clamp(-BOX_HALF_WIDTH, BOX_HALF_WIDTH), p[1].clamp(-BOX_HALF_WIDTH, BOX_HALF_WIDTH)]
}

impl World {
    pub fn continuous() -> Self {
        World::Continuous(ContinuousWorld::default())
    }

    pub fn discrete() -> Self {
        World::Discrete(DiscreteWorld::default())
    }

    pub fn id(&self) -> WorldId {
        match self {
            World::Continuous(_) => WorldId::Continuous,
            World::Discrete(_) => WorldId::Discrete,
        }
    }

    pub fn centers(&self) -> [[f64; 2]; 2] {
        match self {
            World::Continuous(w) => w.centers,
            World::Discrete(_) => ContinuousWorld::default().centers,
        }
    }

    fn nearest_center(&self, p: [f64; 2]) -> usize {
        let c = self.centers();
        if norm(sub(p, c[0])) <= norm(sub(p, c[1])) {
            0
        } else {
            1
        }
    }

    /// Builds an in-world sample at `p` (clamped; snapped to the grid in the discrete world).
    pub fn sample_at(&self, p: [f64; 2]) -> Sample {
        match self {
            World::Continuous(_) => Sample::continuous(clamp_box(p)),
            World::Discrete(_) => {
                let s = nearest_state(p);
                Sample {
                    world: WorldId::Discrete,
                    point: grid_point(s),
                    state: Some(s),
                }
            }
        }
    }

    pub fn check_instruction(&self, instr: &EditInstruction) -> Result<(), WorldError> {
        instr.validate()?;
        if let World::Discrete(_) = self {
            let ok = instr.object == Object::Point && matches!(instr.verb, Verb::Translate | Verb::Reflect | Verb::Keep);
            if !ok {
                return Err(WorldError::UnsupportedInstruction(format!(
                    "{:?} {:?} in the discrete world",
                    instr.verb, instr.object
                )));
            }
        }
        Ok(())
    }

    fn pivot(&self, input: [f64; 2], object: Object) -> [f64; 2] {
        match object {
            Object::Point => [0.0, 0.0],
            Object::Cluster => self.centers()[self.nearest_center(input)],
        }
    }

    /// Unclamped geometric target of a perfect edit.
    fn raw_target(&self, input: [f64; 2], instr: &EditInstruction) -> [f64; 2] {
        let pivot = self.pivot(input, instr.object);
        match instr.verb {
            Verb::Translate => add(input, [instr.params[0], instr.params[1]]),
            Verb::Reflect => [2.0 * pivot[0] - input[0], input[1]],
            Verb::Scale => add(pivot, scale(sub(input, pivot), instr.params[0])),
            Verb::Recolor => {
                let c = self.centers();
                let k = self.nearest_center(input);
                add(sub(input, c[k]), c[1 - k])
            }
            Verb::Keep => input,
        }
    }

    /// Mean of the correct-edit distribution, as an in-world sample.
    pub fn true_edit_mean(&self, input: &Sample, instr: &EditInstruction) -> Result<Sample, WorldError> {
        self.check_instruction(instr)?;
        Ok(self.sample_at(self.raw_target(input.point, instr)))
    }

    /// Unit vector along which the instruction licenses movement, if any.
    pub fn licensed_direction(&self, input: &Sample, instr: &EditInstruction) -> Result<Option<[f64; 2]>, WorldError> {
        self.check_instruction(instr)?;
        let unit = |v: [f64; 2]| {
            let n = norm(v);
            (n > 0.0).then(|| scale(v, 1.0 / n))
        };
        Ok(match instr.verb {
            Verb::Translate => unit([instr.params[0], instr.params[1]]),
            Verb::Reflect => Some([1.0, 0.0]),
            Verb::Scale => unit(sub(input.point, self.pivot(input.point, instr.object))),
            Verb::Recolor => {
                let c = self.centers();
                let k = self.nearest_center(input.point);
                unit(sub(c[1 - k], c[k]))
            }
            Verb::Keep => None,
        })
    }

    /// Distance from `edited` to the correct-edit mean.
    pub fn alignment_distance(&self, input: &Sample, instr: &EditInstruction, edited: &Sample) -> Result<f64, WorldError> {
        let mean = self.true_edit_mean(input, instr)?;
        Ok(norm(sub(edited.point, mean.point)))
    }

    /// Size of the displacement `edited - input` outside the licensed direction.
    pub fn offtarget_distance(&self, input: &Sample, instr: &EditInstruction, edited: &Sample) -> Result<f64, WorldError> {
        let v = sub(edited.point, input.point);
        Ok(match self.licensed_direction(input, instr)? {
            Some(u) => {
                let along = v[0] * u[0] + v[1] * u[1];
                norm(sub(v, scale(u, along)))
            }
            None => norm(v),
        })
    }

    /// Draws from the correct-edit distribution for `instr` applied to `input`.
    pub fn true_edit(&self, input: &Sample, instr: &EditInstruction, rng: &mut Rng) -> Result<Sample, WorldError> {
        self.check_instruction(instr)?;
        match self {
            World::Continuous(w) => {
                let target = self.raw_target(input.point, instr);
                let noise = rng.normal2();
                Ok(self.sample_at(add(target, scale(noise, w.jitter))))
            }
            World::Discrete(w) => {
                if w.uniform_edits {
                    Ok(self.sample_at(grid_point(rng.below(DISCRETE_STATES))))
                } else {
                    self.true_edit_mean(input, instr)
                }
            }
        }
    }

    /// Every instruction the world can emit.
    pub fn catalog(&self) -> Vec<EditInstruction> {
        match self {
            World::Discrete(_) => DiscreteWorld::catalog(),
            World::Continuous(_) => {
                let mut v = Vec::new();
                for o in Object::ALL {
                    for d in ["right", "left", "up", "down"] {
                        for m in [0.5, 1.0, 1.5] {
                            v.push(EditInstruction::translate(o, d, m).unwrap());
                        }
                    }
                    v.push(EditInstruction::reflect(o));
                    v.push(EditInstruction::scale(o, 2.0).unwrap());
                    v.push(EditInstruction::scale(o, 0.5).unwrap());
                    v.push(EditInstruction::recolor(o));
                    v.push(EditInstruction::keep(o));
                }
                v
            }
        }
    }

    /// Verb uniform, then object uniform, then parameters uniform.
    fn draw_continuous_instruction(rng: &mut Rng) -> EditInstruction {
        let verb = Verb::ALL[rng.below(Verb::ALL.len())];
        let object = Object::ALL[rng.below(Object::ALL.len())];
        match verb {
            Verb::Translate => {
                let d = ["right", "left", "up", "down"][rng.below(4)];
                let m = [0.5, 1.0, 1.5][rng.below(3)];
                EditInstruction::translate(object, d, m).unwrap()
            }
            Verb::Reflect => EditInstruction::reflect(object),
            Verb::Scale => EditInstruction::scale(object, [2.0, 0.5][rng.below(2)]).unwrap(),
            Verb::Recolor => EditInstruction::recolor(object),
            Verb::Keep => EditInstruction::keep(object),
        }
    }

    /// Draws an (input, instruction) condition from the world's condition distribution.
    pub fn draw_condition(&self, rng: &mut Rng) -> (Sample, EditInstruction) {
        match self {
            World::Continuous(w) => {
                let c = w.centers[rng.below(2)];
                let n = rng.normal2();
                let input = self.sample_at(add(c, scale(n, w.spread)));
                (input, Self::draw_continuous_instruction(rng))
            }
            World::Discrete(w) => {
                let (s, instr) = &w.conditions[rng.below(w.conditions.len())];
                (self.sample_at(grid_point(*s)), instr.clone())
            }
        }
    }

    fn corrupted_edit(
        &self,
        input: &Sample,
        instr: &EditInstruction,
        kind: Corruption,
        rng: &mut Rng,
    ) -> Result<Sample, WorldError> {
        match self {
            World::Discrete(_) => {
                let outcomes = self.discrete_branch(input, instr, Some(kind))?;
                Ok(pick(&outcomes, rng))
            }
            World::Continuous(w) => {
                let target = self.raw_target(input.point, instr);
                let p = match kind {
                    Corruption::WrongEdit => {
                        let wrong = loop {
                            let cand = Self::draw_continuous_instruction(rng);
                            if cand.text != instr.text {
                                break cand;
                            }
                        };
                        return self.true_edit(input, &wrong, rng);
                    }
                    Corruption::Exaggerated => {
                        let p = add(input.point, scale(sub(target, input.point), 2.0));
                        add(p, scale(rng.normal2(), w.jitter))
                    }
                    Corruption::OffTarget => {
                        let dir = match self.licensed_direction(input, instr)? {
                            Some(u) => {
                                let sign = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
                                [-u[1] * sign, u[0] * sign]
                            }
                            None => {
                                let theta = rng.uniform_range(0.0, std::f64::consts::TAU);
                                [theta.cos(), theta.sin()]
                            }
                        };
                        let magnitude = rng.uniform_range(0.5, 1.5);
                        let p = add(target, scale(dir, magnitude));
                        add(p, scale(rng.normal2(), w.jitter))
                    }
                };
                Ok(self.sample_at(p))
            }
        }
    }

    /// Exact outcome distribution of one generation branch in the discrete
    /// world: `None` is the clean branch.
    fn discrete_branch(
        &self,
        input: &Sample,
        instr: &EditInstruction,
        kind: Option<Corruption>,
    ) -> Result<Vec<(usize, f64)>, WorldError> {
        let World::Discrete(w) = self else {
            return Err(WorldError::Unsupported("discrete branch in a continuous world"));
        };
        self.check_instruction(instr)?;
        if w.uniform_edits {
            return Ok((0..DISCRETE_STATES).map(|s| (s, 1.0 / DISCRETE_STATES as f64)).collect());
        }
        let at = |p: [f64; 2]| nearest_state(p);
        let target = self.raw_target(input.point, instr);
        Ok(match kind {
            None => vec![(at(target), 1.0)],
            Some(Corruption::WrongEdit) => {
                let others: Vec<EditInstruction> =
                    DiscreteWorld::catalog().into_iter().filter(|c| c.text != instr.text).collect();
                let p = 1.0 / others.len() as f64;
                others.iter().map(|o| (at(self.raw_target(input.point, o)), p)).collect()
            }
            Some(Corruption::Exaggerated) => {
                vec![(at(add(input.point, scale(sub(target, input.point), 2.0))), 1.0)]
            }
            Some(Corruption::OffTarget) => {
                let dirs: Vec<[f64; 2]> = match self.licensed_direction(input, instr)? {
                    Some(u) => vec![[-u[1], u[0]], [u[1], -u[0]]],
                    None => vec![[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]],
                };
                let p = 1.0 / dirs.len() as f64;
                dirs.iter().map(|d| (at(add(target, scale(*d, GRID_STEP))), p)).collect()
            }
        })
    }

    /// One triplet drawn from an independent stream seeded by `seed`.
    pub fn generate_triplet(&self, corruption_rate: f64, seed: u64) -> Result<Triplet, WorldError> {
        let mut rng = Rng::new(seed);
        let (input, instruction) = self.draw_condition(&mut rng);
        let corrupted = rng.bernoulli(corruption_rate);
        let edited = if corrupted {
            let kind = Corruption::ALL[rng.below(3)];
            self.corrupted_edit(&input, &instruction, kind, &mut rng)?
        } else {
            self.true_edit(&input, &instruction, &mut rng)?
        };
        Ok(Triplet {
            input,
            instruction,
            edited,
            provenance: if corrupted { Provenance::Corrupted } else { Provenance::Clean },
            seed,
        })
    }

    /// `n` triplets; record `i` uses its own derived seed, so output is
    /// independent of evaluation order.
    pub fn generate_dataset(&self, n: usize, corruption_rate: f64, rng: &mut Rng) -> Result<Vec<Triplet>, WorldError> {
        if n == 0 {
            return Err(WorldError::InvalidArgument("dataset size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&corruption_rate) {
            return Err(WorldError::InvalidArgument(format!("corruption rate {corruption_rate}")));
        }
        let base = rng.next_u64();
        use rayon::prelude::*;
        (0..n as u64)
            .into_par_iter()
            .map(|i| self.generate_triplet(corruption_rate, derive_seed(base, i)))
            .collect()
    }

    /// Exact `p_data(edited | condition)` for every discrete-world condition
    /// at the given corruption rate.
    pub fn discrete_world_tables(&self, corruption_rate: f64) -> Result<DiscreteTables, WorldError> {
        let World::Discrete(w) = self else {
            return Err(WorldError::Unsupported("tables exist only for the discrete world"));
        };
        let mut rows = Vec::with_capacity(w.conditions.len());
        for (s, instr) in &w.conditions {
            let input = self.sample_at(grid_point(*s));
            let mut row = vec![0.0; DISCRETE_STATES];
            for (state, p) in self.discrete_branch(&input, instr, None)? {
                row[state] += (1.0 - corruption_rate) * p;
            }
            for kind in Corruption::ALL {
                for (state, p) in self.discrete_branch(&input, instr, Some(kind))? {
                    row[state] += corruption_rate / 3.0 * p;
                }
            }
            rows.push(row);
        }
        Ok(DiscreteTables {
            support: (0..DISCRETE_STATES).map(grid_point).collect(),
            conditions: w.conditions.clone(),
            rows,
        })
    }

    /// Index of the discrete condition matching `(input, instr)`, if any.
    pub fn condition_index(&self, input: &Sample, instr: &EditInstruction) -> Option<usize> {
        let World::Discrete(w) = self else { return None };
        w.conditions
            .iter()
            .position(|(s, i)| Some(*s) == input.state && i.text == instr.text)
    }
}

fn pick(outcomes: &[(usize, f64)], rng: &mut Rng) -> Sample {
    let u = rng.uniform();
    let mut acc = 0.0;
    let mut chosen = outcomes.last().unwrap().0;
    for &(s, p) in outcomes {
        acc += p;
        if u < acc {
            chosen = s;
            break;
        }
    }
    Sample {
        world: WorldId::Discrete,
        point: grid_point(chosen),
        state: Some(chosen),
    }
}

/// Conditional edit distributions of the discrete world.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteTables {
    pub support: Vec<[f64; 2]>,
    pub conditions: Vec<(usize, EditInstruction)>,
    pub rows: Vec<Vec<f64>>,
}
