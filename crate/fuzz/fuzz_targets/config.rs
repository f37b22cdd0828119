#![no_main]

use libfuzzer_sys::fuzz_target;
use unitden::pipeline::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = PipelineConfig::parse(text) {
        assert_eq!(PipelineConfig::parse(&c.to_text()).unwrap(), c);
    }
});
