#![no_main]

use libfuzzer_sys::fuzz_target;
use unitden::pseudo_ssl::{features_from_bytes, features_to_bytes};

fuzz_target!(|data: &[u8]| {
    if let Ok(f) = features_from_bytes(data) {
        let again = features_from_bytes(&features_to_bytes(&f).unwrap()).unwrap();
        assert_eq!(again.num_layers(), f.num_layers());
    }
});
