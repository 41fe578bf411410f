#![no_main]

use libfuzzer_sys::fuzz_target;
use nvphasor::polarization::ellipse_from_phasor;
use nvphasor::report::FitReport;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(r) = FitReport::from_json(text) {
        let _ = ellipse_from_phasor(&r.result.ac.b_ac, 16);
    }
});
