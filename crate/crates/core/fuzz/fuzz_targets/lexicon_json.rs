#![no_main]

use editlab_core::instructions::{invert, tag, Lexicon};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(lex) = Lexicon::from_json(text) {
        for probe in ["add a dog", "remove the red car from the table", "change the sky to night"] {
            let _ = tag(probe, &lex);
            let _ = invert(probe, &lex);
        }
    }
});
