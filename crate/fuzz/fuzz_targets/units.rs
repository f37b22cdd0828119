#![no_main]

use libfuzzer_sys::fuzz_target;
use unitden::quantizer::{parse_units, units_to_text};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    for dedup in [false, true] {
        if let Ok(seqs) = parse_units(text, dedup) {
            assert_eq!(parse_units(&units_to_text(&seqs), dedup).unwrap(), seqs);
        }
    }
});
