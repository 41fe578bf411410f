//! Replays the checked-in fuzz corpus seeds through the same checks the
//! fuzz targets make, so the seeds stay valid on a stable toolchain.

use std::fs;
use std::path::PathBuf;

use nvphasor::io::{parse_spectrum_csv, write_spectrum_csv};
use nvphasor::pipeline::PipelineConfig;
use nvphasor::report::FitReport;
use nvphasor::synth::ScenarioFile;
use nvphasor::OrientationSet;

fn seeds(target: &str) -> Vec<(PathBuf, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let text = fs::read_to_string(&p).unwrap();
            (p, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn spectrum_seeds() {
    let mut parsed = 0;
    for (p, text) in seeds("spectrum_csv") {
        if let Ok(s) = parse_spectrum_csv(&text) {
            assert_eq!(
                parse_spectrum_csv(&write_spectrum_csv(&s)).unwrap(),
                s,
                "{}",
                p.display()
            );
            parsed += 1;
        }
    }
    assert!(parsed >= 2);
}

#[test]
fn config_seeds() {
    for (p, text) in seeds("pipeline_config") {
        let c = PipelineConfig::from_json(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(
            PipelineConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap(),
            c
        );
    }
}

#[test]
fn scenario_seeds() {
    for (p, text) in seeds("scenario") {
        ScenarioFile::from_json(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn fit_report_seeds() {
    for (p, text) in seeds("fit_report") {
        FitReport::from_json(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn orientation_seeds() {
    for (p, text) in seeds("orientation_set") {
        let o: OrientationSet =
            serde_json::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(o, nvphasor::default_orientation_set());
    }
}
