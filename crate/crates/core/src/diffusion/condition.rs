use serde::{Deserialize, Serialize};

use crate::worlds::{EditInstruction, INSTRUCTION_SLOTS};

/// Number of reward buckets; bucket indices are `1..=BUCKETS`.
pub const BUCKETS: usize = 5;
pub const TIME_EMBEDDING_DIM: usize = 16;
/// Coordinates are scaled by this factor before entering the network.
pub const COORD_SCALE: f64 = 0.5;

const Z_OFF: usize = 0;
const TIME_OFF: usize = Z_OFF + 2;
const IMAGE_OFF: usize = TIME_OFF + TIME_EMBEDDING_DIM;
const IMAGE_NULL: usize = IMAGE_OFF + 2;
const INSTR_OFF: usize = IMAGE_NULL + 1;
const INSTR_NULL: usize = INSTR_OFF + INSTRUCTION_SLOTS;
const PARAM_OFF: usize = INSTR_NULL + 1;
const BUCKET_OFF: usize = PARAM_OFF + 2;
const BUCKET_NULL: usize = BUCKET_OFF + BUCKETS;
/// Width of the epsilon network's input vector.
pub const FEATURE_DIM: usize = BUCKET_NULL + 1;

/// Structured instruction code: `(verb, object)` slot plus two parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstructionFeatures {
    pub slot: usize,
    pub params: [f64; 2],
}

impl From<&EditInstruction> for InstructionFeatures {
    fn from(instr: &EditInstruction) -> Self {
        Self {
            slot: instr.slot(),
            params: instr.param_features(),
        }
    }
}

/// `[c_I, c_E, c_R]`; `None` is the null condition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub image: Option<[f64; 2]>,
    pub instruction: Option<InstructionFeatures>,
    pub bucket: Option<usize>,
}

impl Condition {
    pub const NULL: Condition = Condition {
        image: None,
        instruction: None,
        bucket: None,
    };

    pub fn new(image: [f64; 2], instruction: &EditInstruction) -> Self {
        Self {
            image: Some(image),
            instruction: Some(instruction.into()),
            bucket: None,
        }
    }

    pub fn with_bucket(self, bucket: Option<usize>) -> Self {
        Self { bucket, ..self }
    }

    pub fn without_image(self) -> Self {
        Self { image: None, ..self }
    }

    pub fn without_instruction(self) -> Self {
        Self {
            instruction: None,
            ..self
        }
    }
}

/// Sinusoidal embedding of `t / T` at frequencies `π·2^k / 2`, `k = 0..8`.
pub fn time_embedding(t: usize, steps: usize, out: &mut [f64]) {
    let s = t as f64 / steps as f64;
    for k in 0..TIME_EMBEDDING_DIM / 2 {
        let w = std::f64::consts::FRAC_PI_2 * f64::from(1u32 << k);
        out[2 * k] = (w * s).sin();
        out[2 * k + 1] = (w * s).cos();
    }
}

/// Writes the network input for `(z_t, t, c)` into `out` (length [`FEATURE_DIM`]).
pub fn encode(z: [f64; 2], t: usize, steps: usize, cond: &Condition, out: &mut [f64]) {
    debug_assert_eq!(out.len(), FEATURE_DIM);
    out.fill(0.0);
    out[Z_OFF] = z[0] * COORD_SCALE;
    out[Z_OFF + 1] = z[1] * COORD_SCALE;
    time_embedding(t, steps, &mut out[TIME_OFF..TIME_OFF + TIME_EMBEDDING_DIM]);
    match cond.image {
        Some(p) => {
            out[IMAGE_OFF] = p[0] * COORD_SCALE;
            out[IMAGE_OFF + 1] = p[1] * COORD_SCALE;
        }
        None => out[IMAGE_NULL] = 1.0,
    }
    match cond.instruction {
        Some(f) => {
            out[INSTR_OFF + f.slot] = 1.0;
            out[PARAM_OFF] = f.params[0];
            out[PARAM_OFF + 1] = f.params[1];
        }
        None => out[INSTR_NULL] = 1.0,
    }
    match cond.bucket {
        Some(b) => out[BUCKET_OFF + b - 1] = 1.0,
        None => out[BUCKET_NULL] = 1.0,
    }
}

/// First-layer input columns that carry the bucket condition, including its null slot.
pub fn bucket_columns() -> std::ops::Range<usize> {
    BUCKET_OFF..BUCKET_NULL + 1
}
