#![no_main]

use editlab_core::jsonl::from_jsonl;
use editlab_core::preference::{pairs_from_ranking, RankedGroup};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(groups) = from_jsonl::<RankedGroup>(text) else { return };
    for g in &groups {
        if g.validate().is_ok() && g.ranking.is_some() {
            let k = g.k();
            assert_eq!(pairs_from_ranking(g).expect("ranked").len(), k * (k - 1) / 2);
            assert_eq!(g.positions().expect("ranked").len(), k);
        }
    }
});
