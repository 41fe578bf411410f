#![no_main]

use libfuzzer_sys::fuzz_target;
use nvphasor::{OrientationSet, RealFieldVector};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(o) = serde_json::from_str::<OrientationSet>(text) {
        let b = RealFieldVector::crystal(1e-3, -2e-3, 0.5e-3);
        for i in 1..=4 {
            let r = o.to_nv_frame(i, &b).expect("valid set rotates");
            assert!((r.norm() - b.norm()).abs() < 1e-9 * b.norm());
        }
    }
});
