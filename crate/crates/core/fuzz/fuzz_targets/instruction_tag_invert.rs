#![no_main]

use std::sync::OnceLock;

use editlab_core::instructions::{invert, roundtrip_check, tag, Lexicon};
use libfuzzer_sys::fuzz_target;

fn lexicon() -> &'static Lexicon {
    static LEX: OnceLock<Lexicon> = OnceLock::new();
    LEX.get_or_init(Lexicon::bundled)
}

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let lex = lexicon();
    let tagged = tag(text, lex);
    assert_eq!(tagged, tag(text, lex));
    if let Some(out) = invert(text, lex).text() {
        assert!(!out.is_empty());
        let _ = invert(out, lex);
        let _ = roundtrip_check(text, lex);
    }
});
