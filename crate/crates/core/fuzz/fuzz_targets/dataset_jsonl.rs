#![no_main]

use editlab_core::jsonl::{from_jsonl, to_jsonl};
use editlab_core::worlds::Triplet;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = from_jsonl::<Triplet>(text) {
        let back: Vec<Triplet> = from_jsonl(&to_jsonl(&records)).expect("re-parse");
        assert_eq!(back, records);
    }
});
