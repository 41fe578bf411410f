#![no_main]

use libfuzzer_sys::fuzz_target;
use nvphasor::synth::{generate_pair, ScenarioFile};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(f) = ScenarioFile::from_json(text) {
        if f.scenario.n_points <= 4096 {
            let _ = generate_pair(&f.scenario);
        }
    }
});
