//! Real and complex (phasor) magnetic field vectors tagged with their
//! coordinate frame.
//!
//! A phasor `B = B' + iB''` describes the time-varying field
//! `Re[B e^{iωt}]`; each cartesian component carries its own amplitude and
//! phase.

use std::fmt;

use nalgebra::Vector3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coordinate frame a field vector is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Frame {
    Lab,
    Crystal,
    /// Frame of NV sub-ensemble `1..=4`, z along the NV axis.
    Nv(u8),
}

impl Frame {
    pub fn is_nv(self) -> bool {
        matches!(self, Frame::Nv(_))
    }
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Frame::Lab => f.write_str("lab"),
            Frame::Crystal => f.write_str("crystal"),
            Frame::Nv(i) => write!(f, "nv{i}"),
        }
    }
}

impl From<Frame> for String {
    fn from(f: Frame) -> String {
        f.to_string()
    }
}

impl TryFrom<String> for Frame {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        match s.as_str() {
            "lab" => Ok(Frame::Lab),
            "crystal" => Ok(Frame::Crystal),
            _ => match s.strip_prefix("nv").map(str::parse::<u8>) {
                Some(Ok(i @ 1..=4)) => Ok(Frame::Nv(i)),
                _ => Err(format!("unknown frame tag {s:?}")),
            },
        }
    }
}

/// Real field vector in tesla.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealFieldVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub frame: Frame,
}

impl RealFieldVector {
    pub const fn new(x: f64, y: f64, z: f64, frame: Frame) -> Self {
        Self { x, y, z, frame }
    }

    pub const fn zero(frame: Frame) -> Self {
        Self::new(0.0, 0.0, 0.0, frame)
    }

    pub fn crystal(x: f64, y: f64, z: f64) -> Self {
        Self::new(x, y, z, Frame::Crystal)
    }

    pub fn from_vector(v: Vector3<f64>, frame: Frame) -> Self {
        Self::new(v.x, v.y, v.z, frame)
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn ensure_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "non-finite field component in {self:?}"
            )))
        }
    }

    pub fn ensure_frame(&self, expected: Frame) -> Result<()> {
        if self.frame == expected {
            Ok(())
        } else {
            Err(Error::FrameMismatch {
                expected: expected.to_string(),
                found: self.frame.to_string(),
            })
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::from_vector(self.to_vector() * c, self.frame)
    }
}

/// Complex phasor field `B' + iB''` in tesla. Both parts share one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawComplexField")]
pub struct ComplexFieldVector {
    real_part: RealFieldVector,
    imag_part: RealFieldVector,
}

#[derive(Deserialize)]
struct RawComplexField {
    real_part: RealFieldVector,
    imag_part: RealFieldVector,
}

impl TryFrom<RawComplexField> for ComplexFieldVector {
    type Error = Error;

    fn try_from(raw: RawComplexField) -> Result<Self> {
        Self::new(raw.real_part, raw.imag_part)
    }
}

impl ComplexFieldVector {
    pub fn new(real_part: RealFieldVector, imag_part: RealFieldVector) -> Result<Self> {
        imag_part.ensure_frame(real_part.frame)?;
        Ok(Self {
            real_part,
            imag_part,
        })
    }

    pub fn zero(frame: Frame) -> Self {
        Self {
            real_part: RealFieldVector::zero(frame),
            imag_part: RealFieldVector::zero(frame),
        }
    }

    pub fn from_vectors(re: Vector3<f64>, im: Vector3<f64>, frame: Frame) -> Self {
        Self {
            real_part: RealFieldVector::from_vector(re, frame),
            imag_part: RealFieldVector::from_vector(im, frame),
        }
    }

    pub fn from_components(c: [Complex64; 3], frame: Frame) -> Self {
        Self::from_vectors(
            Vector3::new(c[0].re, c[1].re, c[2].re),
            Vector3::new(c[0].im, c[1].im, c[2].im),
            frame,
        )
    }

    /// Purely real phasor.
    pub fn real(v: RealFieldVector) -> Self {
        Self {
            real_part: v,
            imag_part: RealFieldVector::zero(v.frame),
        }
    }

    pub fn real_part(&self) -> &RealFieldVector {
        &self.real_part
    }

    pub fn imag_part(&self) -> &RealFieldVector {
        &self.imag_part
    }

    pub fn frame(&self) -> Frame {
        self.real_part.frame
    }

    pub fn components(&self) -> [Complex64; 3] {
        let (re, im) = (self.real_part, self.imag_part);
        [
            Complex64::new(re.x, im.x),
            Complex64::new(re.y, im.y),
            Complex64::new(re.z, im.z),
        ]
    }

    /// Per-component amplitude `|B_k|`.
    pub fn amplitudes(&self) -> [f64; 3] {
        self.components().map(|c| c.norm())
    }

    /// Per-component phase `arg B_k` in radians.
    pub fn phases(&self) -> [f64; 3] {
        self.components().map(|c| c.arg())
    }

    /// `[Re x, Re y, Re z, Im x, Im y, Im z]`.
    pub fn to_array6(&self) -> [f64; 6] {
        let (re, im) = (self.real_part, self.imag_part);
        [re.x, re.y, re.z, im.x, im.y, im.z]
    }

    pub fn from_array6(p: &[f64], frame: Frame) -> Self {
        Self::from_vectors(
            Vector3::new(p[0], p[1], p[2]),
            Vector3::new(p[3], p[4], p[5]),
            frame,
        )
    }

    /// Hermitian norm `sqrt(|B'|^2 + |B''|^2)`.
    pub fn norm(&self) -> f64 {
        self.real_part.norm().hypot(self.imag_part.norm())
    }

    pub fn is_finite(&self) -> bool {
        self.real_part.is_finite() && self.imag_part.is_finite()
    }

    pub fn ensure_finite(&self) -> Result<()> {
        self.real_part.ensure_finite()?;
        self.imag_part.ensure_finite()
    }

    /// Multiplies the phasor by the complex scalar `c`.
    pub fn scaled(&self, c: Complex64) -> Self {
        let comps = self.components().map(|b| b * c);
        Self::from_components(comps, self.frame())
    }

    pub fn neg(&self) -> Self {
        self.scaled(Complex64::new(-1.0, 0.0))
    }

    /// Applies a real 3x3 linear map to both parts, retagging the frame.
    pub fn map(&self, m: &nalgebra::Matrix3<f64>, frame: Frame) -> Self {
        Self::from_vectors(
            m * self.real_part.to_vector(),
            m * self.imag_part.to_vector(),
            frame,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_tags_round_trip_through_json() {
        for f in [Frame::Lab, Frame::Crystal, Frame::Nv(1), Frame::Nv(4)] {
            let s = serde_json::to_string(&f).unwrap();
            assert_eq!(serde_json::from_str::<Frame>(&s).unwrap(), f);
        }
        assert!(serde_json::from_str::<Frame>("\"nv5\"").is_err());
        assert!(serde_json::from_str::<Frame>("\"nv\"").is_err());
    }

    #[test]
    fn complex_parts_must_share_frame() {
        let re = RealFieldVector::crystal(1.0, 0.0, 0.0);
        let im = RealFieldVector::new(0.0, 1.0, 0.0, Frame::Lab);
        assert!(matches!(
            ComplexFieldVector::new(re, im),
            Err(Error::FrameMismatch { .. })
        ));
        let json = r#"{"real_part":{"x":0,"y":0,"z":0,"frame":"crystal"},
                       "imag_part":{"x":0,"y":0,"z":0,"frame":"nv2"}}"#;
        assert!(serde_json::from_str::<ComplexFieldVector>(json).is_err());
    }

    #[test]
    fn amplitudes_and_phases() {
        let b = ComplexFieldVector::from_components(
            [
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 2.0),
                Complex64::new(-3.0, 0.0),
            ],
            Frame::Crystal,
        );
        assert_eq!(b.amplitudes(), [1.0, 2.0, 3.0]);
        let ph = b.phases();
        assert_eq!(ph[0], 0.0);
        assert!((ph[1] - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!((ph[2] - std::f64::consts::PI).abs() < 1e-15);
    }
}
