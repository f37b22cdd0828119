#![no_main]

use libfuzzer_sys::fuzz_target;
use unitden::quantizer::{codebook_from_bytes, codebook_to_bytes};

fuzz_target!(|data: &[u8]| {
    if let Ok(cb) = codebook_from_bytes(data) {
        let _ = codebook_from_bytes(&codebook_to_bytes(&cb)).unwrap();
    }
});
