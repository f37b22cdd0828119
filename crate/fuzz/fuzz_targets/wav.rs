#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(w) = unitden::audio::decode_wav(data) {
        let bytes = unitden::audio::encode_wav(&w).expect("decoded audio re-encodes");
        assert_eq!(unitden::audio::decode_wav(&bytes).unwrap(), w);
    }
});
