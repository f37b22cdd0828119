#![no_main]

use libfuzzer_sys::fuzz_target;
use unitden::denoiser::TrainingLog;
use unitden::pipeline::{AdaptPoint, EvalSummary};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = TrainingLog::parse(text);
    let _ = EvalSummary::parse(text);
    let _ = AdaptPoint::parse_series(text);
});
