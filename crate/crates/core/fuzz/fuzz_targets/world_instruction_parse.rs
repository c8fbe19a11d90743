#![no_main]

use editlab_core::worlds::EditInstruction;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(instr) = EditInstruction::parse(text) {
        let again = EditInstruction::parse(&instr.text).expect("canonical text parses");
        assert_eq!(again, instr);
    }
});
