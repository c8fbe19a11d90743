use std::fmt;

use serde::{Deserialize, Serialize};

use super::WorldError;

/// Half-width of the square every continuous sample lives in.
pub const BOX_HALF_WIDTH: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorldId {
    Continuous,
    Discrete,
}

impl fmt::Display for WorldId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WorldId::Continuous => "continuous",
            WorldId::Discrete => "discrete",
        })
    }
}

/// A point in a world. Discrete samples also carry their state index; their
/// `point` is the grid location of that state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub world: WorldId,
    pub point: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<usize>,
}

impl Sample {
    pub fn continuous(point: [f64; 2]) -> Self {
        Self {
            world: WorldId::Continuous,
            point,
            state: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verb {
    Translate,
    Reflect,
    Scale,
    Recolor,
    Keep,
}

impl Verb {
    pub const ALL: [Verb; 5] = [Verb::Translate, Verb::Reflect, Verb::Scale, Verb::Recolor, Verb::Keep];

    pub fn name(self) -> &'static str {
        match self {
            Verb::Translate => "translate",
            Verb::Reflect => "reflect",
            Verb::Scale => "scale",
            Verb::Recolor => "recolor",
            Verb::Keep => "keep",
        }
    }

    pub fn index(self) -> usize {
        Verb::ALL.iter().position(|&v| v == self).unwrap()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Object {
    /// Edits pivot on the origin.
    Point,
    /// Edits pivot on the center of the mixture component nearest the input.
    Cluster,
}

impl Object {
    pub const ALL: [Object; 2] = [Object::Point, Object::Cluster];

    pub fn name(self) -> &'static str {
        match self {
            Object::Point => "point",
            Object::Cluster => "cluster",
        }
    }
}

/// Number of distinct (verb, object) pairs; the instruction embedding width.
pub const INSTRUCTION_SLOTS: usize = Verb::ALL.len() * Object::ALL.len();

/// Structured edit plus its surface text.
///
/// `params` is `[dx, dy]` for translate, `[factor]` for scale and empty otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditInstruction {
    pub verb: Verb,
    pub object: Object,
    #[serde(default)]
    pub params: Vec<f64>,
    pub text: String,
}

const DIRECTIONS: [(&str, [f64; 2]); 4] = [
    ("right", [1.0, 0.0]),
    ("left", [-1.0, 0.0]),
    ("up", [0.0, 1.0]),
    ("down", [0.0, -1.0]),
];

fn format_magnitude(m: f64) -> String {
    if m.fract() == 0.0 {
        format!("{m:.1}")
    } else {
        format!("{m}")
    }
}

impl EditInstruction {
    pub fn translate(object: Object, direction: &str, magnitude: f64) -> Result<Self, WorldError> {
        let (_, unit) = DIRECTIONS
            .iter()
            .find(|(d, _)| *d == direction)
            .ok_or_else(|| WorldError::UnsupportedInstruction(format!("direction {direction:?}")))?;
        if !(magnitude.is_finite() && magnitude > 0.0) {
            return Err(WorldError::UnsupportedInstruction(format!("magnitude {magnitude}")));
        }
        Ok(Self {
            verb: Verb::Translate,
            object,
            params: vec![unit[0] * magnitude, unit[1] * magnitude],
            text: format!(
                "translate the {} {direction} by {}",
                object.name(),
                format_magnitude(magnitude)
            ),
        })
    }

    pub fn reflect(object: Object) -> Self {
        Self::bare(Verb::Reflect, object, format!("reflect the {} across the y-axis", object.name()))
    }

    pub fn scale(object: Object, factor: f64) -> Result<Self, WorldError> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(WorldError::UnsupportedInstruction(format!("scale factor {factor}")));
        }
        let text = if factor == 2.0 {
            format!("enlarge the {}", object.name())
        } else if factor == 0.5 {
            format!("shrink the {}", object.name())
        } else {
            format!("scale the {} by {}", object.name(), format_magnitude(factor))
        };
        Ok(Self {
            verb: Verb::Scale,
            object,
            params: vec![factor],
            text,
        })
    }

    pub fn recolor(object: Object) -> Self {
        Self::bare(Verb::Recolor, object, format!("recolor the {}", object.name()))
    }

    pub fn keep(object: Object) -> Self {
        Self::bare(Verb::Keep, object, format!("keep the {}", object.name()))
    }

    fn bare(verb: Verb, object: Object, text: String) -> Self {
        Self {
            verb,
            object,
            params: Vec::new(),
            text,
        }
    }

    /// Index of the (verb, object) pair in `0..INSTRUCTION_SLOTS`.
    pub fn slot(&self) -> usize {
        self.verb.index() * Object::ALL.len() + Object::ALL.iter().position(|&o| o == self.object).unwrap()
    }

    /// Parameter passthrough for the networks: always two numbers.
    pub fn param_features(&self) -> [f64; 2] {
        match self.verb {
            Verb::Translate => [self.params[0], self.params[1]],
            Verb::Scale => [self.params[0], 0.0],
            _ => [0.0, 0.0],
        }
    }

    /// Checks that the structured fields are internally consistent.
    pub fn validate(&self) -> Result<(), WorldError> {
        let ok = match self.verb {
            Verb::Translate => {
                self.params.len() == 2
                    && self.params.iter().all(|p| p.is_finite())
                    && (self.params[0] == 0.0) != (self.params[1] == 0.0)
            }
            Verb::Scale => self.params.len() == 1 && self.params[0].is_finite() && self.params[0] > 0.0,
            _ => self.params.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            Err(WorldError::UnsupportedInstruction(format!("{self:?}")))
        }
    }

    /// Parses the world's surface grammar back into the structured form.
    ///
    /// Accepted shapes (any determiner in place of `the`):
    /// `translate the OBJ DIR by NUM`, `reflect the OBJ across the y-axis`,
    /// `enlarge|shrink the OBJ`, `scale the OBJ by NUM`, `recolor the OBJ`, `keep the OBJ`.
    pub fn parse(text: &str) -> Result<Self, WorldError> {
        let lowered = text.to_lowercase();
        let tokens: Vec<&str> = lowered.split_whitespace().collect();
        let err = || WorldError::Parse(text.to_string());
        if tokens.len() < 3 || !matches!(tokens[1], "the" | "a" | "an") {
            return Err(err());
        }
        let object = match tokens[2] {
            "point" => Object::Point,
            "cluster" => Object::Cluster,
            _ => return Err(err()),
        };
        let rest = &tokens[3..];
        let number = |s: &str| -> Result<f64, WorldError> {
            let v: f64 = s.parse().map_err(|_| err())?;
            if v.is_finite() && v > 0.0 {
                Ok(v)
            } else {
                Err(err())
            }
        };
        let parsed = match (tokens[0], rest) {
            ("translate", [dir, "by", num]) => Self::translate(object, dir, number(num)?).map_err(|_| err())?,
            ("reflect", ["across", "the", "y-axis"]) => Self::reflect(object),
            ("enlarge", []) => Self::scale(object, 2.0)?,
            ("shrink", []) => Self::scale(object, 0.5)?,
            ("scale", ["by", num]) => Self::scale(object, number(num)?)?,
            ("recolor", []) => Self::recolor(object),
            ("keep", []) => Self::keep(object),
            _ => return Err(err()),
        };
        // Keep the caller's surface text verbatim.
        Ok(Self {
            text: text.to_string(),
            ..parsed
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Clean,
    Corrupted,
    CycleAugmented,
}

/// `(input, instruction, edited)` training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "TripletRecord", try_from = "TripletRecord")]
pub struct Triplet {
    pub input: Sample,
    pub instruction: EditInstruction,
    pub edited: Sample,
    pub provenance: Provenance,
    pub seed: u64,
}

impl Triplet {
    pub fn world(&self) -> WorldId {
        self.input.world
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    point: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    state: Option<usize>,
}

/// Dataset line schema: `{world, input, instruction, edited, provenance, seed}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct TripletRecord {
    world: WorldId,
    input: SampleRecord,
    instruction: EditInstruction,
    edited: SampleRecord,
    provenance: Provenance,
    seed: u64,
}

impl From<Triplet> for TripletRecord {
    fn from(t: Triplet) -> Self {
        Self {
            world: t.input.world,
            input: SampleRecord {
                point: t.input.point,
                state: t.input.state,
            },
            instruction: t.instruction,
            edited: SampleRecord {
                point: t.edited.point,
                state: t.edited.state,
            },
            provenance: t.provenance,
            seed: t.seed,
        }
    }
}

impl TryFrom<TripletRecord> for Triplet {
    type Error = WorldError;

    fn try_from(r: TripletRecord) -> Result<Self, Self::Error> {
        let to_sample = |s: SampleRecord| -> Result<Sample, WorldError> {
            if s.point.iter().any(|v| !v.is_finite() || v.abs() > BOX_HALF_WIDTH) {
                return Err(WorldError::InvalidRecord(format!("point {:?} outside the box", s.point)));
            }
            match (r.world, s.state) {
                (WorldId::Continuous, Some(_)) => {
                    return Err(WorldError::InvalidRecord("continuous sample with a state".into()))
                }
                (WorldId::Discrete, None) => {
                    return Err(WorldError::InvalidRecord("discrete sample without a state".into()))
                }
                _ => {}
            }
            Ok(Sample {
                world: r.world,
                point: s.point,
                state: s.state,
            })
        };
        r.instruction.validate()?;
        Ok(Triplet {
            input: to_sample(r.input)?,
            instruction: r.instruction,
            edited: to_sample(r.edited)?,
            provenance: r.provenance,
            seed: r.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surface_text_reparses_to_same_structure() {
        let mut all = Vec::new();
        for o in Object::ALL {
            for (d, _) in DIRECTIONS {
                for m in [0.5, 1.0, 1.5, 2.0] {
                    all.push(EditInstruction::translate(o, d, m).unwrap());
                }
            }
            all.push(EditInstruction::reflect(o));
            all.push(EditInstruction::scale(o, 2.0).unwrap());
            all.push(EditInstruction::scale(o, 0.5).unwrap());
            all.push(EditInstruction::scale(o, 3.0).unwrap());
            all.push(EditInstruction::recolor(o));
            all.push(EditInstruction::keep(o));
        }
        for instr in all {
            assert_eq!(EditInstruction::parse(&instr.text).unwrap(), instr, "{}", instr.text);
        }
    }

    #[test]
    fn slots_are_unique() {
        let mut seen = std::collections::BTreeSet::new();
        for v in Verb::ALL {
            for o in Object::ALL {
                let i = EditInstruction {
                    verb: v,
                    object: o,
                    params: vec![],
                    text: String::new(),
                };
                assert!(seen.insert(i.slot()));
            }
        }
        assert_eq!(seen.len(), INSTRUCTION_SLOTS);
    }

    #[test]
    fn parse_rejects_foreign_text() {
        for t in ["add a dog", "translate the point sideways by 1.0", "keep it", "", "scale the point by -1"] {
            assert!(EditInstruction::parse(t).is_err(), "{t}");
        }
    }

    #[test]
    fn triplet_json_rejects_mixed_worlds() {
        let line = r#"{"world":"continuous","input":{"point":[0,0],"state":3},"instruction":{"verb":"keep","object":"point","params":[],"text":"keep the point"},"edited":{"point":[0,0]},"provenance":"clean","seed":1}"#;
        assert!(serde_json::from_str::<Triplet>(line).is_err());
    }
}
