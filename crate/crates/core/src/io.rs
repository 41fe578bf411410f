//! Text formats: spectrum CSV and ellipse point-cloud CSV.
//!
//! Spectrum files carry optional `# key=value` metadata lines, then the
//! header `freq_hz,x,y` and one row per sample. `demod_frequency_hz` is read
//! from the metadata when present.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::lineshape::QuadratureSpectrum;
use crate::polarization::PolarizationEllipse;

pub const SPECTRUM_HEADER: &str = "freq_hz,x,y";
pub const DEMOD_KEY: &str = "demod_frequency_hz";

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

pub fn parse_spectrum_csv(text: &str) -> Result<QuadratureSpectrum> {
    let mut meta = BTreeMap::new();
    let mut header_seen = false;
    let (mut freqs, mut xs, mut ys) = (Vec::new(), Vec::new(), Vec::new());
    let mut header_line = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if header_seen {
                continue;
            }
            if let Some((k, v)) = comment.split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        if !header_seen {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols != ["freq_hz", "x", "y"] {
                return Err(parse_err(
                    line_no,
                    format!("expected header `{SPECTRUM_HEADER}`, found `{line}`"),
                ));
            }
            header_seen = true;
            header_line = line_no;
            continue;
        }
        let mut cols = line.split(',');
        let mut field = |name: &str| -> Result<f64> {
            let tok = cols
                .next()
                .ok_or_else(|| parse_err(line_no, format!("missing column `{name}`")))?
                .trim();
            let v: f64 = tok.parse().map_err(|_| {
                parse_err(line_no, format!("column `{name}`: `{tok}` is not a number"))
            })?;
            if !v.is_finite() {
                return Err(parse_err(line_no, format!("column `{name}` is not finite")));
            }
            Ok(v)
        };
        let f = field("freq_hz")?;
        let x = field("x")?;
        let y = field("y")?;
        if cols.next().is_some() {
            return Err(parse_err(line_no, "more than 3 columns"));
        }
        if let Some(&prev) = freqs.last() {
            if f <= prev {
                return Err(parse_err(
                    line_no,
                    format!("frequency {f} does not increase (previous {prev})"),
                ));
            }
        }
        freqs.push(f);
        xs.push(x);
        ys.push(y);
    }
    if !header_seen {
        return Err(parse_err(0, format!("missing header `{SPECTRUM_HEADER}`")));
    }
    let demod = match meta.remove(DEMOD_KEY) {
        Some(v) => v
            .parse::<f64>()
            .map_err(|_| parse_err(0, format!("metadata `{DEMOD_KEY}`: `{v}` is not a number")))?,
        None => 0.0,
    };
    QuadratureSpectrum::new(freqs, xs, ys, demod, meta).map_err(|e| match e {
        Error::InvalidInput(m) => parse_err(header_line, m),
        e => e,
    })
}

/// Serializes with shortest round-trip float formatting.
pub fn write_spectrum_csv(s: &QuadratureSpectrum) -> String {
    let mut out = String::with_capacity(40 * s.len() + 64);
    let _ = writeln!(out, "# {DEMOD_KEY}={}", s.demod_frequency_hz());
    for (k, v) in s.metadata() {
        if k != DEMOD_KEY && !k.contains(['\n', '=']) && !v.contains('\n') {
            let _ = writeln!(out, "# {k}={v}");
        }
    }
    out.push_str(SPECTRUM_HEADER);
    out.push('\n');
    for k in 0..s.len() {
        let _ = writeln!(
            out,
            "{},{},{}",
            s.freqs()[k],
            s.x_channel()[k],
            s.y_channel()[k]
        );
    }
    out
}

/// Point cloud with the axes and eccentricity in `#` header lines, then
/// `phi,px,py,pz` rows (radians, tesla).
pub fn write_ellipse_csv(e: &PolarizationEllipse) -> String {
    let mut out = String::new();
    let [ux, uy, uz] = e.semi_major.to_array();
    let [vx, vy, vz] = e.semi_minor.to_array();
    let _ = writeln!(out, "# frame={}", e.semi_major.frame);
    let _ = writeln!(out, "# semi_major_t={ux},{uy},{uz}");
    let _ = writeln!(out, "# semi_minor_t={vx},{vy},{vz}");
    let _ = writeln!(out, "# eccentricity={}", e.eccentricity);
    let _ = writeln!(out, "# degenerate={}", e.degenerate);
    out.push_str("phi,px,py,pz\n");
    for p in &e.points {
        let _ = writeln!(out, "{},{},{},{}", p.phi, p.p[0], p.p[1], p.p[2]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{ComplexFieldVector, Frame};
    use crate::polarization::ellipse_from_phasor;
    use num_complex::Complex64;

    fn sample(n: usize) -> String {
        let mut s = String::from("# demod_frequency_hz=777\n# kind=fm\nfreq_hz,x,y\n");
        for k in 0..n {
            s.push_str(&format!(
                "{},{},{}\n",
                2.8e9 + 1e5 * k as f64,
                0.1 * k as f64,
                -0.5
            ));
        }
        s
    }

    #[test]
    fn parses_metadata_and_rows() {
        let s = parse_spectrum_csv(&sample(60)).unwrap();
        assert_eq!(s.len(), 60);
        assert_eq!(s.demod_frequency_hz(), 777.0);
        assert_eq!(s.metadata()["kind"], "fm");
        assert!(!s.metadata().contains_key(DEMOD_KEY));
        assert_eq!(s.x_channel()[3], 0.30000000000000004);
    }

    #[test]
    fn round_trip_is_exact() {
        let s = parse_spectrum_csv(&sample(60)).unwrap();
        let back = parse_spectrum_csv(&write_spectrum_csv(&s)).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn errors_name_the_line() {
        let mut text = sample(60);
        text = text.replacen("2800000000,0,-0.5", "2800000000,zero,-0.5", 1);
        match parse_spectrum_csv(&text) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 4);
                assert!(message.contains("zero"));
            }
            other => panic!("{other:?}"),
        }
        let text = sample(60).replacen("2800100000,", "2790000000,", 1);
        assert!(matches!(
            parse_spectrum_csv(&text),
            Err(Error::Parse { line: 5, .. })
        ));
        assert!(matches!(
            parse_spectrum_csv("f,x,y\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(parse_spectrum_csv(""), Err(Error::Parse { .. })));
        assert!(matches!(
            parse_spectrum_csv(&sample(10)),
            Err(Error::Parse { .. })
        ));
        let extra = sample(60).replacen("-0.5\n", "-0.5,1\n", 1);
        assert!(parse_spectrum_csv(&extra).is_err());
    }

    #[test]
    fn ellipse_csv_layout() {
        let b = ComplexFieldVector::from_components(
            [
                Complex64::new(1e-6, 0.0),
                Complex64::new(0.0, 1e-6),
                Complex64::new(0.0, 0.0),
            ],
            Frame::Crystal,
        );
        let e = ellipse_from_phasor(&b, 16).unwrap();
        let text = write_ellipse_csv(&e);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# frame=crystal");
        assert!(lines[3].starts_with("# eccentricity=0"));
        assert_eq!(lines[5], "phi,px,py,pz");
        assert_eq!(lines.len(), 6 + 16);
    }
}
