use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::InstructionError;

pub const LEXICON_FORMAT_VERSION: u32 = 1;

const BUNDLED_LEXICON: &str = include_str!("../../data/lexicon.json");

/// On-disk lexicon schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconFile {
    pub format_version: u32,
    pub verb_pairs: Vec<(String, String)>,
    #[serde(default)]
    pub other_verbs: Vec<String>,
    /// Self-paired verbs whose inverse swaps the two noun phrases.
    #[serde(default)]
    pub swap_verbs: Vec<String>,
    pub determiners: Vec<String>,
    pub prepositions: Vec<String>,
    /// `((verb, prep), (inverse verb, inverse prep))`.
    #[serde(default)]
    pub preposition_pairs: Vec<((String, String), (String, String))>,
    #[serde(default)]
    pub adjective_pairs: Vec<(String, String)>,
    pub nouns: Vec<String>,
    pub adjectives: Vec<String>,
}

/// Closed vocabulary plus the pairing tables used for inversion.
#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    verb_pair: BTreeMap<String, String>,
    verbs: BTreeSet<String>,
    swap_verbs: BTreeSet<String>,
    determiners: BTreeSet<String>,
    prepositions: BTreeSet<String>,
    prep_pair: BTreeMap<(String, String), (String, String)>,
    adjective_pair: BTreeMap<String, String>,
    nouns: BTreeSet<String>,
    adjectives: BTreeSet<String>,
}

fn insert_involution(
    map: &mut BTreeMap<String, String>,
    a: &str,
    b: &str,
    what: &str,
) -> Result<(), InstructionError> {
    for (k, v) in [(a, b), (b, a)] {
        if let Some(prev) = map.insert(k.to_string(), v.to_string()) {
            if prev != v {
                return Err(InstructionError::Lexicon(format!("{what} {k:?} paired with both {prev:?} and {v:?}")));
            }
        }
    }
    Ok(())
}

impl Lexicon {
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, InstructionError> {
        let file: LexiconFile = serde_json::from_str(text).map_err(|e| InstructionError::Lexicon(e.to_string()))?;
        Self::from_file(file)
    }

    /// Validates the file: supported version, pairings are involutions,
    /// every paired word is in its word class.
    pub fn from_file(file: LexiconFile) -> Result<Self, InstructionError> {
        if file.format_version != LEXICON_FORMAT_VERSION {
            return Err(InstructionError::Lexicon(format!(
                "unsupported format_version {}",
                file.format_version
            )));
        }
        let lower = |v: &[String]| v.iter().map(|s| s.to_lowercase()).collect::<BTreeSet<_>>();
        let mut verb_pair = BTreeMap::new();
        for (a, b) in &file.verb_pairs {
            insert_involution(&mut verb_pair, &a.to_lowercase(), &b.to_lowercase(), "verb")?;
        }
        let mut verbs: BTreeSet<String> = verb_pair.keys().cloned().collect();
        verbs.extend(lower(&file.other_verbs));
        let swap_verbs = lower(&file.swap_verbs);
        for v in &swap_verbs {
            if verb_pair.get(v) != Some(v) {
                return Err(InstructionError::Lexicon(format!("swap verb {v:?} must pair with itself")));
            }
        }
        let prepositions = lower(&file.prepositions);
        let mut prep_pair = BTreeMap::new();
        for ((v1, p1), (v2, p2)) in &file.preposition_pairs {
            let a = (v1.to_lowercase(), p1.to_lowercase());
            let b = (v2.to_lowercase(), p2.to_lowercase());
            if verb_pair.get(&a.0) != Some(&b.0) {
                return Err(InstructionError::Lexicon(format!("preposition pair {a:?}/{b:?} disagrees with verb pairs")));
            }
            if !prepositions.contains(&a.1) || !prepositions.contains(&b.1) {
                return Err(InstructionError::Lexicon(format!("unknown preposition in {a:?}/{b:?}")));
            }
            for (k, v) in [(a.clone(), b.clone()), (b.clone(), a.clone())] {
                if let Some(prev) = prep_pair.insert(k.clone(), v.clone()) {
                    if prev != v {
                        return Err(InstructionError::Lexicon(format!("{k:?} paired twice")));
                    }
                }
            }
        }
        let adjectives = lower(&file.adjectives);
        let mut adjective_pair = BTreeMap::new();
        for (a, b) in &file.adjective_pairs {
            let (a, b) = (a.to_lowercase(), b.to_lowercase());
            if !adjectives.contains(&a) || !adjectives.contains(&b) {
                return Err(InstructionError::Lexicon(format!("adjective pair {a:?}/{b:?} not in adjectives")));
            }
            insert_involution(&mut adjective_pair, &a, &b, "adjective")?;
        }
        Ok(Self {
            verb_pair,
            verbs,
            swap_verbs,
            determiners: lower(&file.determiners),
            prepositions,
            prep_pair,
            adjective_pair,
            nouns: lower(&file.nouns),
            adjectives,
        })
    }

    pub fn is_verb(&self, w: &str) -> bool {
        self.verbs.contains(w)
    }

    pub fn is_determiner(&self, w: &str) -> bool {
        self.determiners.contains(w)
    }

    pub fn is_preposition(&self, w: &str) -> bool {
        self.prepositions.contains(w)
    }

    pub fn is_noun(&self, w: &str) -> bool {
        self.nouns.contains(w)
    }

    pub fn is_adjective(&self, w: &str) -> bool {
        self.adjectives.contains(w)
    }

    pub fn verb_pair(&self, verb: &str) -> Option<&str> {
        self.verb_pair.get(verb).map(String::as_str)
    }

    pub fn is_swap_verb(&self, verb: &str) -> bool {
        self.swap_verbs.contains(verb)
    }

    pub fn preposition_pair(&self, verb: &str, prep: &str) -> Option<(&str, &str)> {
        self.prep_pair
            .get(&(verb.to_string(), prep.to_string()))
            .map(|(v, p)| (v.as_str(), p.as_str()))
    }

    pub fn adjective_pair(&self, adj: &str) -> Option<&str> {
        self.adjective_pair.get(adj).map(String::as_str)
    }

    pub fn paired_verbs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.verb_pair.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verb_pairing_is_an_involution() {
        let lex = Lexicon::bundled();
        for (v, p) in lex.paired_verbs() {
            assert_eq!(lex.verb_pair(p), Some(v));
        }
        assert_eq!(lex.verb_pair("add"), Some("remove"));
        assert_eq!(lex.verb_pair("make"), None);
        assert!(lex.is_verb("make"));
    }

    #[test]
    fn rejects_conflicting_pairs() {
        let mut file: LexiconFile = serde_json::from_str(BUNDLED_LEXICON).unwrap();
        file.verb_pairs.push(("add".into(), "delete".into()));
        assert!(Lexicon::from_file(file).is_err());
    }

    #[test]
    fn rejects_unknown_version() {
        let mut file: LexiconFile = serde_json::from_str(BUNDLED_LEXICON).unwrap();
        file.format_version = 7;
        assert!(Lexicon::from_file(file).is_err());
    }
}
