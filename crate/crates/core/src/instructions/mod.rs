//! Rule-based cycle-consistency engine: a lexicon-driven tagger, template
//! matching for invertible instructions, inversion and dataset augmentation
//! with reversed triplets.

mod lexicon;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::worlds::{EditInstruction, Provenance, Triplet};

pub use lexicon::{Lexicon, LexiconFile, LEXICON_FORMAT_VERSION};

/// 500 instructions over the add, change, make, remove and put verb classes.
pub const BUNDLED_CORPUS: &str = include_str!("../../data/corpus.txt");
/// Hand-checked tag sequences for [`BUNDLED_CORPUS`], one line per instruction.
pub const BUNDLED_CORPUS_TAGS: &str = include_str!("../../data/corpus.tags");

#[derive(Debug, thiserror::Error)]
pub enum InstructionError {
    #[error("lexicon: {0}")]
    Lexicon(String),
    #[error("instruction {0:?} is not invertible")]
    NotInvertible(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Tag {
    Verb,
    Det,
    Noun,
    Prep,
    Adj,
    Num,
    Other,
}

impl Tag {
    pub fn as_str(self) -> &'static str {
        match self {
            Tag::Verb => "VERB",
            Tag::Det => "DET",
            Tag::Noun => "NOUN",
            Tag::Prep => "PREP",
            Tag::Adj => "ADJ",
            Tag::Num => "NUM",
            Tag::Other => "OTHER",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedInstruction {
    pub tokens: Vec<(String, Tag)>,
}

impl TaggedInstruction {
    pub fn tags(&self) -> Vec<Tag> {
        self.tokens.iter().map(|(_, t)| *t).collect()
    }

    pub fn tag_line(&self) -> String {
        self.tokens.iter().map(|(_, t)| t.as_str()).collect::<Vec<_>>().join(" ")
    }

    pub fn text(&self) -> String {
        self.tokens.iter().map(|(w, _)| w.as_str()).collect::<Vec<_>>().join(" ")
    }
}

fn is_number(w: &str) -> bool {
    w.starts_with(|c: char| c.is_ascii_digit() || c == '.' || c == '-' || c == '+')
        && w.parse::<f64>().is_ok_and(f64::is_finite)
}

/// Lowercases and splits on whitespace. The first token is a VERB when the
/// lexicon knows it; later tokens are looked up in the order
/// DET, PREP, NUM, ADJ, NOUN, VERB with OTHER as fallback.
pub fn tag(text: &str, lex: &Lexicon) -> TaggedInstruction {
    let tokens = text
        .split_whitespace()
        .enumerate()
        .map(|(i, raw)| {
            let w = raw.to_lowercase();
            let t = if i == 0 && lex.is_verb(&w) {
                Tag::Verb
            } else if lex.is_determiner(&w) {
                Tag::Det
            } else if lex.is_preposition(&w) {
                Tag::Prep
            } else if is_number(&w) {
                Tag::Num
            } else if lex.is_adjective(&w) {
                Tag::Adj
            } else if lex.is_noun(&w) {
                Tag::Noun
            } else if lex.is_verb(&w) {
                Tag::Verb
            } else {
                Tag::Other
            };
            (w, t)
        })
        .collect();
    TaggedInstruction { tokens }
}

/// Which invertible template matched and how it rewrites its arguments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InversionRule {
    /// `VERB NP` becomes `VERB' NP`.
    VerbObject,
    /// `VERB NP PREP NP` becomes `VERB' NP PREP' NP` via the preposition pairs.
    VerbObjectPrep,
    /// `VERB NP1 PREP NP2` becomes `VERB NP2 PREP NP1` for swap verbs.
    Swap,
    /// `VERB NP ADJ PREP NUM` becomes `VERB' NP ADJ' PREP NUM` via the adjective pairs.
    Directional,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Inversion {
    Inverted { text: String, rule: InversionRule },
    NotInvertible,
}

impl Inversion {
    pub fn text(&self) -> Option<&str> {
        match self {
            Inversion::Inverted { text, .. } => Some(text),
            Inversion::NotInvertible => None,
        }
    }
}

/// Normalized noun phrase: the words after the determiner.
fn match_np(tokens: &[(String, Tag)], start: usize) -> Option<(usize, Vec<&str>)> {
    let mut i = start;
    if tokens.get(i).is_some_and(|(_, t)| *t == Tag::Det) {
        i += 1;
    }
    let body_start = i;
    while tokens.get(i).is_some_and(|(_, t)| *t == Tag::Adj) {
        i += 1;
    }
    let noun_start = i;
    while tokens.get(i).is_some_and(|(_, t)| *t == Tag::Noun) {
        i += 1;
    }
    if i == noun_start {
        return None;
    }
    Some((i, tokens[body_start..i].iter().map(|(w, _)| w.as_str()).collect()))
}

fn np_text(body: &[&str]) -> String {
    format!("the {}", body.join(" "))
}

/// Rewrites every determiner to `the` and gives determiner-less noun phrases one.
pub fn normalize_determiners(text: &str, lex: &Lexicon) -> String {
    let tagged = tag(text, lex);
    let toks = &tagged.tokens;
    let mut out: Vec<String> = Vec::with_capacity(toks.len() + 1);
    let mut i = 0;
    while i < toks.len() {
        let np = (i > 0 || toks[0].1 != Tag::Verb)
            .then(|| match_np(toks, i))
            .flatten();
        match np {
            Some((end, body)) => {
                out.push(np_text(&body));
                i = end;
            }
            None => {
                out.push(if toks[i].1 == Tag::Det { "the".into() } else { toks[i].0.clone() });
                i += 1;
            }
        }
    }
    out.join(" ")
}

/// Matches the invertible templates and rewrites the instruction.
pub fn invert(text: &str, lex: &Lexicon) -> Inversion {
    let tagged = tag(text, lex);
    let toks = &tagged.tokens;
    let Some((verb, Tag::Verb)) = toks.first().map(|(w, t)| (w.as_str(), *t)) else {
        return Inversion::NotInvertible;
    };
    let Some(inverse) = lex.verb_pair(verb) else {
        return Inversion::NotInvertible;
    };
    let Some((after_np, body)) = match_np(toks, 1) else {
        return Inversion::NotInvertible;
    };
    let obj = np_text(&body);
    let rest = &toks[after_np..];
    let tags: Vec<Tag> = rest.iter().map(|(_, t)| *t).collect();
    let done = |text: String, rule| Inversion::Inverted { text, rule };

    if rest.is_empty() {
        if lex.is_swap_verb(verb) {
            return Inversion::NotInvertible;
        }
        return done(format!("{inverse} {obj}"), InversionRule::VerbObject);
    }
    if tags == [Tag::Adj, Tag::Prep, Tag::Num] {
        let Some(adj) = lex.adjective_pair(&rest[0].0) else {
            return Inversion::NotInvertible;
        };
        return done(
            format!("{inverse} {obj} {adj} {} {}", rest[1].0, rest[2].0),
            InversionRule::Directional,
        );
    }
    if tags[0] == Tag::Prep {
        let prep = rest[0].0.as_str();
        let Some((end, body2)) = match_np(rest, 1) else {
            return Inversion::NotInvertible;
        };
        if end != rest.len() {
            return Inversion::NotInvertible;
        }
        let second = np_text(&body2);
        let Some((inv_verb, inv_prep)) = lex.preposition_pair(verb, prep) else {
            return Inversion::NotInvertible;
        };
        if lex.is_swap_verb(verb) {
            return done(format!("{verb} {second} {prep} {obj}"), InversionRule::Swap);
        }
        return done(format!("{inv_verb} {obj} {inv_prep} {second}"), InversionRule::VerbObjectPrep);
    }
    Inversion::NotInvertible
}

/// `invert(invert(text)) == normalize_determiners(text)`; errors when `text` is not invertible.
pub fn roundtrip_check(text: &str, lex: &Lexicon) -> Result<bool, InstructionError> {
    let Some(once) = invert(text, lex).text().map(str::to_string) else {
        return Err(InstructionError::NotInvertible(text.to_string()));
    };
    Ok(invert(&once, lex).text() == Some(normalize_determiners(text, lex).as_str()))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentStats {
    /// Non-augmented input triplets considered.
    pub considered: usize,
    /// Triplets whose instruction matched an invertible template.
    pub invertible: usize,
    /// Inversions dropped because the world grammar cannot execute them.
    pub rejected_by_world: usize,
    pub appended: usize,
    pub invertible_fraction: f64,
}

fn reversal_key(t: &Triplet) -> (u64, [u64; 4], String) {
    let p = [t.input.point[0], t.input.point[1], t.edited.point[0], t.edited.point[1]].map(f64::to_bits);
    (t.seed, p, t.instruction.text.clone())
}

/// Appends one reversed triplet `(edited, inverse, input)` per invertible
/// instruction. Cycle-augmented records are passed through, never reversed,
/// and a reversal already present in the input is not appended twice.
pub fn augment(dataset: &[Triplet], lex: &Lexicon) -> (Vec<Triplet>, AugmentStats) {
    let mut out = dataset.to_vec();
    let mut stats = AugmentStats::default();
    let mut present: HashSet<_> = dataset
        .iter()
        .filter(|t| t.provenance == Provenance::CycleAugmented)
        .map(reversal_key)
        .collect();
    for t in dataset {
        if t.provenance == Provenance::CycleAugmented {
            continue;
        }
        stats.considered += 1;
        let Some(text) = invert(&t.instruction.text, lex).text().map(str::to_string) else {
            continue;
        };
        stats.invertible += 1;
        let Ok(instruction) = EditInstruction::parse(&text) else {
            stats.rejected_by_world += 1;
            continue;
        };
        let reversed = Triplet {
            input: t.edited,
            instruction,
            edited: t.input,
            provenance: Provenance::CycleAugmented,
            seed: t.seed,
        };
        if present.insert(reversal_key(&reversed)) {
            out.push(reversed);
            stats.appended += 1;
        }
    }
    stats.invertible_fraction = if stats.considered == 0 {
        0.0
    } else {
        stats.invertible as f64 / stats.considered as f64
    };
    (out, stats)
}

/// Fraction of non-blank lines that match an invertible template.
pub fn invertible_fraction(lines: &str, lex: &Lexicon) -> f64 {
    let texts: Vec<&str> = lines.lines().filter(|l| !l.trim().is_empty()).collect();
    if texts.is_empty() {
        return 0.0;
    }
    let n = texts.iter().filter(|l| invert(l, lex) != Inversion::NotInvertible).count();
    n as f64 / texts.len() as f64
}
