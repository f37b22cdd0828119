#![no_main]

use libfuzzer_sys::fuzz_target;
use unitden::denoiser::DenoiserModel;
use unitden::substrate::Checkpoint;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ck) = Checkpoint::parse(text) {
        let _ = Checkpoint::parse(&ck.to_text()).unwrap();
        let _ = DenoiserModel::from_checkpoint(&ck);
    }
});
