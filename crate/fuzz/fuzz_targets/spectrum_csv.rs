#![no_main]

use libfuzzer_sys::fuzz_target;
use nvphasor::io::{parse_spectrum_csv, write_spectrum_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(s) = parse_spectrum_csv(text) {
        let again = parse_spectrum_csv(&write_spectrum_csv(&s)).expect("written spectrum must parse");
        assert_eq!(s.freqs(), again.freqs());
        assert_eq!(s.x_channel(), again.x_channel());
        assert_eq!(s.y_channel(), again.y_channel());
    }
});
