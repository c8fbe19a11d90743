use editlab_core::instructions::{
    augment, invert, invertible_fraction, normalize_determiners, roundtrip_check, tag, Inversion, Lexicon,
    BUNDLED_CORPUS, BUNDLED_CORPUS_TAGS,
};
use editlab_core::numerics::Rng;
use editlab_core::worlds::{Provenance, World};
use proptest::prelude::*;

#[test]
fn corpus_has_five_hundred_lines() {
    assert_eq!(BUNDLED_CORPUS.lines().count(), 500);
    assert_eq!(BUNDLED_CORPUS_TAGS.lines().count(), 500);
}

#[test]
fn tagger_matches_golden_tags() {
    let lex = Lexicon::bundled();
    let mut mismatches = Vec::new();
    for (line, golden) in BUNDLED_CORPUS.lines().zip(BUNDLED_CORPUS_TAGS.lines()) {
        let got = tag(line, &lex).tag_line();
        if got != golden {
            mismatches.push(format!("{line:?}: got {got}, want {golden}"));
        }
    }
    assert!(mismatches.is_empty(), "{}", mismatches.join("\n"));
}

#[test]
fn every_invertible_corpus_line_round_trips() {
    let lex = Lexicon::bundled();
    let mut invertible = 0;
    for line in BUNDLED_CORPUS.lines() {
        if invert(line, &lex) != Inversion::NotInvertible {
            invertible += 1;
            assert!(roundtrip_check(line, &lex).unwrap(), "{line}");
        }
    }
    assert!(invertible > 0);
    let fraction = invertible_fraction(BUNDLED_CORPUS, &lex);
    assert!((fraction - invertible as f64 / 500.0).abs() < 1e-12);
}

#[test]
fn inversion_keeps_object_noun_phrase() {
    let lex = Lexicon::bundled();
    for line in BUNDLED_CORPUS.lines() {
        if let Some(inv) = invert(line, &lex).text() {
            let norm = normalize_determiners(line, &lex);
            let first_np: Vec<&str> = norm.split(' ').skip(1).take_while(|w| !lex.is_preposition(w)).collect();
            let first_np = first_np.join(" ");
            assert!(inv.contains(&first_np), "{line} -> {inv}");
        }
    }
}

#[test]
fn augmenting_generated_data_adds_one_reversal_per_invertible_triplet() {
    let lex = Lexicon::bundled();
    let data = World::continuous().generate_dataset(400, 0.3, &mut Rng::new(11)).unwrap();
    let (out, stats) = augment(&data, &lex);
    assert_eq!(&out[..data.len()], &data[..]);
    assert_eq!(out.len(), data.len() + stats.appended);
    assert_eq!(stats.appended + stats.rejected_by_world, stats.invertible);
    let expected = data.iter().filter(|t| invert(&t.instruction.text, &lex) != Inversion::NotInvertible).count();
    assert_eq!(stats.invertible, expected);
    for (orig, rev) in data
        .iter()
        .filter(|t| invert(&t.instruction.text, &lex) != Inversion::NotInvertible)
        .zip(&out[data.len()..])
    {
        assert_eq!(rev.provenance, Provenance::CycleAugmented);
        assert_eq!(rev.input, orig.edited);
        assert_eq!(rev.edited, orig.input);
    }
}

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(vec![
        "add", "remove", "change", "put", "take", "make", "translate", "the", "a", "some", "dog", "cat", "red",
        "old", "to", "from", "on", "off", "into", "by", "right", "up", "1.5", "it", "next", "point",
    ])
    .prop_map(str::to_string)
}

proptest! {
    #[test]
    fn inversion_is_an_involution_up_to_normalization(words in prop::collection::vec(word(), 1..8)) {
        let lex = Lexicon::bundled();
        let text = words.join(" ");
        if let Some(once) = invert(&text, &lex).text() {
            let twice = invert(once, &lex);
            let normalized = normalize_determiners(&text, &lex);
            prop_assert_eq!(twice.text(), Some(normalized.as_str()));
        }
    }

    #[test]
    fn tagging_is_idempotent(words in prop::collection::vec(word(), 0..8)) {
        let lex = Lexicon::bundled();
        let first = tag(&words.join(" "), &lex);
        prop_assert_eq!(tag(&first.text(), &lex), first);
    }
}
