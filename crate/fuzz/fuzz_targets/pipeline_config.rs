#![no_main]

use libfuzzer_sys::fuzz_target;
use nvphasor::pipeline::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(c) = PipelineConfig::from_json(text) {
        let json = serde_json::to_string(&c).expect("config serializes");
        let back = PipelineConfig::from_json(&json).expect("serialized config must parse");
        assert_eq!(c, back);
    }
});
