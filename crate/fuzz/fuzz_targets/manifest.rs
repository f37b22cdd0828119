#![no_main]

use libfuzzer_sys::fuzz_target;
use unitden::audio::Manifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = Manifest::parse(text) {
        assert_eq!(Manifest::parse(&m.to_text()).unwrap().entries.len(), m.entries.len());
    }
});
