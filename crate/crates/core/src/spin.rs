//! NV ground-state spin resonances under a static Zeeman field and the
//! complex modulations produced by a phasor AC field.
//!
//! The spin-1 Hamiltonian `H = D (S_z^2 - 2/3) + γ B·S` has characteristic
//! polynomial (after shifting by `D/3`)
//!
//! ```text
//! λ^3 + D λ^2 - g^2 λ - g_z^2 D = 0,    g = γ|B|,  g_z = γ B_z
//! ```
//!
//! which depends on the field only through `|B|` and `B_z`. The three roots
//! are bracketed by `(-∞, -D]`, `[-D, 0]` and `[0, ∞)`. For any nonzero
//! transverse field the tridiagonal coupling keeps them distinct, so the
//! level adiabatically connected to `|0⟩` is always the lowest root and the
//! `|±1⟩`-connected levels are the upper two. Only an exactly axial field has
//! true crossings; there the levels are diagonal and taken diabatically.
//!
//! Roots are computed as offsets from their zero-field values so that the
//! small Zeeman shifts keep full relative precision; modulations are
//! differences of those shifts rather than of GHz-scale frequencies.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ComplexFieldVector, RealFieldVector};

pub const DEFAULT_ZERO_FIELD_SPLITTING_HZ: f64 = 2.87e9;
pub const DEFAULT_GYROMAGNETIC_RATIO_HZ_PER_T: f64 = 2.8e10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinParams {
    /// Zero-field splitting `D` in Hz.
    #[serde(default = "default_d")]
    pub zero_field_splitting_hz: f64,
    /// Gyromagnetic ratio `γ` in Hz/T.
    #[serde(default = "default_gamma")]
    pub gyromagnetic_ratio_hz_per_t: f64,
}

fn default_d() -> f64 {
    DEFAULT_ZERO_FIELD_SPLITTING_HZ
}

fn default_gamma() -> f64 {
    DEFAULT_GYROMAGNETIC_RATIO_HZ_PER_T
}

impl Default for SpinParams {
    fn default() -> Self {
        Self {
            zero_field_splitting_hz: DEFAULT_ZERO_FIELD_SPLITTING_HZ,
            gyromagnetic_ratio_hz_per_t: DEFAULT_GYROMAGNETIC_RATIO_HZ_PER_T,
        }
    }
}

impl SpinParams {
    pub fn new(zero_field_splitting_hz: f64, gyromagnetic_ratio_hz_per_t: f64) -> Result<Self> {
        let p = Self {
            zero_field_splitting_hz,
            gyromagnetic_ratio_hz_per_t,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.zero_field_splitting_hz) || !ok(self.gyromagnetic_ratio_hz_per_t) {
            return Err(Error::invalid(format!(
                "spin parameters must be finite and positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn d(&self) -> f64 {
        self.zero_field_splitting_hz
    }

    pub fn gamma(&self) -> f64 {
        self.gyromagnetic_ratio_hz_per_t
    }
}

/// Resonance branch: transition from `|0⟩` to the upper (`Plus`) or lower
/// (`Minus`) of the two `|±1⟩`-connected levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Minus,
    Plus,
}

impl Branch {
    pub const BOTH: [Branch; 2] = [Branch::Minus, Branch::Plus];

    fn slot(self) -> usize {
        match self {
            Branch::Minus => 0,
            Branch::Plus => 1,
        }
    }
}

/// `(branch, orientation)` pair naming one of the eight ensemble resonances.
/// Orientations are numbered `1..=4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ResonanceLabel {
    pub orientation: u8,
    pub branch: Branch,
}

impl ResonanceLabel {
    pub fn new(branch: Branch, orientation: u8) -> Result<Self> {
        if !(1..=4).contains(&orientation) {
            return Err(Error::OrientationOutOfRange(orientation as usize));
        }
        Ok(Self {
            orientation,
            branch,
        })
    }

    /// All eight labels in canonical slot order (orientation-major).
    pub fn all() -> [ResonanceLabel; 8] {
        std::array::from_fn(Self::from_slot)
    }

    pub fn from_slot(slot: usize) -> Self {
        assert!(slot < 8, "slot {slot} out of range");
        Self {
            orientation: (slot / 2) as u8 + 1,
            branch: if slot % 2 == 0 {
                Branch::Minus
            } else {
                Branch::Plus
            },
        }
    }

    pub fn slot(&self) -> usize {
        (self.orientation as usize - 1) * 2 + self.branch.slot()
    }

    pub fn orientation_index(&self) -> usize {
        self.orientation as usize - 1
    }
}

impl std::fmt::Display for ResonanceLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sign = match self.branch {
            Branch::Minus => '-',
            Branch::Plus => '+',
        };
        write!(f, "f{sign}@nv{}", self.orientation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonancePair {
    pub f_minus: f64,
    pub f_plus: f64,
}

impl ResonancePair {
    pub fn get(&self, branch: Branch) -> f64 {
        match branch {
            Branch::Minus => self.f_minus,
            Branch::Plus => self.f_plus,
        }
    }
}

/// Complex peak-to-peak modulation of both branches of one orientation (Hz).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchModulation {
    pub minus: Complex64,
    pub plus: Complex64,
}

impl BranchModulation {
    pub fn get(&self, branch: Branch) -> Complex64 {
        match branch {
            Branch::Minus => self.minus,
            Branch::Plus => self.plus,
        }
    }
}

/// Eight complex modulations `M_{±,i}` in Hz, stored in slot order of
/// [`ResonanceLabel`]. `std_hz` optionally carries the per-quadrature
/// standard uncertainty of each entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationSet {
    pub entries: [Complex64; 8],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_hz: Option<[f64; 8]>,
}

impl ModulationSet {
    pub fn new(entries: [Complex64; 8]) -> Result<Self> {
        let set = Self {
            entries,
            std_hz: None,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn zeros() -> Self {
        Self {
            entries: [Complex64::new(0.0, 0.0); 8],
            std_hz: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .entries
            .iter()
            .any(|m| !m.re.is_finite() || !m.im.is_finite())
        {
            return Err(Error::invalid("non-finite modulation entry"));
        }
        if let Some(std) = &self.std_hz {
            if std.iter().any(|s| !s.is_finite() || *s < 0.0) {
                return Err(Error::invalid("modulation std must be finite and >= 0"));
            }
        }
        Ok(())
    }

    pub fn get(&self, label: ResonanceLabel) -> Complex64 {
        self.entries[label.slot()]
    }

    pub fn set(&mut self, label: ResonanceLabel, value: Complex64) {
        self.entries[label.slot()] = value;
    }

    pub fn iter(&self) -> impl Iterator<Item = (ResonanceLabel, Complex64)> + '_ {
        ResonanceLabel::all()
            .into_iter()
            .zip(self.entries.iter().copied())
    }
}

/// Spin-1 matrices `(S_x, S_y, S_z)` in the `|+1⟩, |0⟩, |-1⟩` basis.
pub fn spin_matrices() -> [Matrix3<Complex64>; 3] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let r = |v: f64| Complex64::new(v, 0.0);
    let i = |v: f64| Complex64::new(0.0, v);
    let z = r(0.0);
    let sx = Matrix3::new(z, r(s), z, r(s), z, r(s), z, r(s), z);
    let sy = Matrix3::new(z, i(-s), z, i(s), z, i(-s), z, i(s), z);
    let sz = Matrix3::new(r(1.0), z, z, z, z, z, z, z, r(-1.0));
    [sx, sy, sz]
}

/// Full Hamiltonian `D (S_z^2 - 2/3) + γ B·S` in Hz.
pub fn hamiltonian(params: &SpinParams, b: &Vector3<f64>) -> Matrix3<Complex64> {
    let [sx, sy, sz] = spin_matrices();
    let d = Complex64::new(params.d(), 0.0);
    let g = params.gamma();
    let third = Complex64::new(2.0 / 3.0, 0.0);
    (sz * sz - Matrix3::identity() * third) * d
        + sx * Complex64::new(g * b.x, 0.0)
        + sy * Complex64::new(g * b.y, 0.0)
        + sz * Complex64::new(g * b.z, 0.0)
}

/// Level structure relative to zero field: `|0⟩`-connected level at
/// `-2D/3 - delta`, `|±1⟩`-connected levels at `D/3 + lambda_±`.
#[derive(Debug, Clone, Copy)]
struct Levels {
    delta: f64,
    lambda_minus: f64,
    lambda_plus: f64,
}

fn levels(params: &SpinParams, b: &Vector3<f64>) -> Levels {
    let d = params.d();
    let gamma = params.gamma();
    let gz = gamma * b.z;
    let gperp2 = gamma * gamma * (b.x * b.x + b.y * b.y);
    let gz2 = gz * gz;

    if gperp2 == 0.0 {
        // Diagonal Hamiltonian: levels are exactly D/3 ± g_z and -2D/3.
        let a = gz.abs();
        return Levels {
            delta: 0.0,
            lambda_minus: -a,
            lambda_plus: a,
        };
    }

    let g2 = gperp2 + gz2;
    let g = g2.sqrt();
    // delta >= 0 solves h(delta) = delta (D+delta-g)(D+delta+g) - g_perp^2 D = 0.
    // h is convex with h(0) < 0, so Newton from any point right of the root
    // descends monotonically onto it.
    let h = |x: f64| x * ((d + x - g) * (d + x + g)) - gperp2 * d;
    let dh = |x: f64| (d + x - g) * (d + x + g) + 2.0 * x * (d + x);
    let mut delta = if g < d {
        (gperp2 * d / ((d - g) * (d + g))).min(g)
    } else {
        g
    };
    for _ in 0..100 {
        let hv = h(delta);
        if hv <= 0.0 {
            break;
        }
        let next = delta - hv / dh(delta);
        if next.is_nan() || next >= delta || next < 0.0 {
            break;
        }
        let step = delta - next;
        delta = next;
        if step <= 4.0 * f64::EPSILON * delta {
            break;
        }
    }

    // The |±1⟩ roots satisfy t^2 - delta t - P = 0 (Vieta on the cubic).
    let p = gz2 * d / (d + delta);
    let lambda_plus = 0.5 * (delta + (delta * delta + 4.0 * p).sqrt());
    let lambda_minus = if lambda_plus > 0.0 {
        -p / lambda_plus
    } else {
        0.0
    };
    Levels {
        delta,
        lambda_minus,
        lambda_plus,
    }
}

/// Eigenvalues of the Hamiltonian as `[E_0, E_-, E_+]` in Hz, labeled by
/// adiabatic continuation from zero field.
pub fn level_energies(params: &SpinParams, b: &Vector3<f64>) -> [f64; 3] {
    let lv = levels(params, b);
    let d = params.d();
    [
        -2.0 * d / 3.0 - lv.delta,
        d / 3.0 + lv.lambda_minus,
        d / 3.0 + lv.lambda_plus,
    ]
}

/// Resonance frequencies minus `D`, as `(f_- - D, f_+ - D)`.
///
/// This is the precision-preserving form used for modulations.
pub fn resonance_shifts(params: &SpinParams, b: &Vector3<f64>) -> (f64, f64) {
    let lv = levels(params, b);
    (lv.lambda_minus + lv.delta, lv.lambda_plus + lv.delta)
}

fn branch_shift(params: &SpinParams, b: &Vector3<f64>, branch: Branch) -> f64 {
    let (m, p) = resonance_shifts(params, b);
    match branch {
        Branch::Minus => m,
        Branch::Plus => p,
    }
}

fn ensure_nv(b: &RealFieldVector) -> Result<()> {
    if b.frame.is_nv() {
        Ok(())
    } else {
        Err(Error::FrameMismatch {
            expected: "nv frame".into(),
            found: b.frame.to_string(),
        })
    }
}

/// Spin-resonance frequencies `f_±` for a static field in an NV frame.
pub fn resonance_frequencies(params: &SpinParams, b_nv: &RealFieldVector) -> Result<ResonancePair> {
    b_nv.ensure_finite()?;
    ensure_nv(b_nv)?;
    let (m, p) = resonance_shifts(params, &b_nv.to_vector());
    Ok(ResonancePair {
        f_minus: params.d() + m,
        f_plus: params.d() + p,
    })
}

/// Peak-to-peak modulation `M(v) = f(B_dc + v) - f(B_dc - v)` for a real
/// amplitude `v`, both vectors in the same NV frame.
pub fn real_modulation(
    params: &SpinParams,
    b_dc: &Vector3<f64>,
    v: &Vector3<f64>,
    branch: Branch,
) -> f64 {
    branch_shift(params, &(b_dc + v), branch) - branch_shift(params, &(b_dc - v), branch)
}

/// Complex modulation `M(Re B_ac) + i M(Im B_ac)` for both branches.
pub fn complex_modulation(
    params: &SpinParams,
    b_dc_nv: &RealFieldVector,
    b_ac_nv: &ComplexFieldVector,
) -> Result<BranchModulation> {
    b_dc_nv.ensure_finite()?;
    b_ac_nv.ensure_finite()?;
    ensure_nv(b_dc_nv)?;
    b_ac_nv.real_part().ensure_frame(b_dc_nv.frame)?;
    Ok(complex_modulation_raw(
        params,
        &b_dc_nv.to_vector(),
        &b_ac_nv.real_part().to_vector(),
        &b_ac_nv.imag_part().to_vector(),
    ))
}

pub(crate) fn complex_modulation_raw(
    params: &SpinParams,
    b_dc: &Vector3<f64>,
    re: &Vector3<f64>,
    im: &Vector3<f64>,
) -> BranchModulation {
    let m = |branch| {
        Complex64::new(
            real_modulation(params, b_dc, re, branch),
            real_modulation(params, b_dc, im, branch),
        )
    };
    BranchModulation {
        minus: m(Branch::Minus),
        plus: m(Branch::Plus),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Frame;

    fn nv(x: f64, y: f64, z: f64) -> RealFieldVector {
        RealFieldVector::new(x, y, z, Frame::Nv(1))
    }

    #[test]
    fn zero_field_is_degenerate_at_d() {
        let p = SpinParams::default();
        let r = resonance_frequencies(&p, &nv(0.0, 0.0, 0.0)).unwrap();
        assert_eq!(r.f_minus, 2.87e9);
        assert_eq!(r.f_plus, 2.87e9);
    }

    #[test]
    fn axial_field_splits_linearly() {
        let p = SpinParams::default();
        let r = resonance_frequencies(&p, &nv(0.0, 0.0, 1e-3)).unwrap();
        assert!((r.f_plus - 2.898e9).abs() <= 1e-9 * 2.898e9);
        assert!((r.f_minus - 2.842e9).abs() <= 1e-9 * 2.842e9);
        // Field sign along the axis is invisible to the spectrum.
        let r2 = resonance_frequencies(&p, &nv(0.0, 0.0, -1e-3)).unwrap();
        assert_eq!(r, r2);
    }

    #[test]
    fn transverse_field_matches_frozen_values() {
        // High-precision (40 digit) eigensolve of the full Hamiltonian.
        let p = SpinParams::default();
        let r = resonance_frequencies(&p, &nv(1e-3, 0.0, 0.0)).unwrap();
        assert!((r.f_minus - 2_870_273_144.735_872_2).abs() < 1e-9 * r.f_minus);
        assert!((r.f_plus - 2_870_546_289.471_744_4).abs() < 1e-9 * r.f_plus);
    }

    #[test]
    fn rejects_non_nv_frame_and_non_finite() {
        let p = SpinParams::default();
        let crystal = RealFieldVector::crystal(0.0, 0.0, 1e-3);
        assert!(resonance_frequencies(&p, &crystal).is_err());
        assert!(matches!(
            resonance_frequencies(&p, &nv(f64::NAN, 0.0, 0.0)),
            Err(Error::InvalidInput(_))
        ));
        assert!(resonance_frequencies(&p, &nv(0.0, f64::INFINITY, 0.0)).is_err());
    }

    #[test]
    fn exactly_axial_field_beyond_level_crossing_follows_diabatic_levels() {
        let p = SpinParams::default();
        // γ B = 1.4 D: the |−1⟩ level has crossed below |0⟩.
        let bz = 1.4 * p.d() / p.gamma();
        let r = resonance_frequencies(&p, &nv(0.0, 0.0, bz)).unwrap();
        assert!((r.f_plus - 2.4 * p.d()).abs() < 1e-6);
        assert!((r.f_minus + 0.4 * p.d()).abs() < 1e-6);
    }

    #[test]
    fn axial_modulation_examples() {
        let p = SpinParams::default();
        let dc = nv(0.0, 0.0, 1e-3);
        let ac = ComplexFieldVector::real(nv(0.0, 0.0, 1e-6));
        let m = complex_modulation(&p, &dc, &ac).unwrap();
        assert!((m.plus.re - 56e3).abs() < 1e-6);
        assert!((m.minus.re + 56e3).abs() < 1e-6);
        assert_eq!(m.plus.im, 0.0);
        assert_eq!(m.minus.im, 0.0);

        let ac_im = ComplexFieldVector::new(nv(0.0, 0.0, 0.0), nv(0.0, 0.0, 1e-6)).unwrap();
        let m = complex_modulation(&p, &dc, &ac_im).unwrap();
        assert_eq!(m.plus.re, 0.0);
        assert!((m.plus.im - 56e3).abs() < 1e-6);

        let zero = ComplexFieldVector::zero(Frame::Nv(1));
        let m = complex_modulation(&p, &dc, &zero).unwrap();
        assert_eq!(m.plus, Complex64::new(0.0, 0.0));
        assert_eq!(m.minus, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn modulation_requires_matching_frames() {
        let p = SpinParams::default();
        let dc = nv(0.0, 0.0, 1e-3);
        let ac = ComplexFieldVector::zero(Frame::Nv(2));
        assert!(complex_modulation(&p, &dc, &ac).is_err());
    }

    #[test]
    fn labels_cover_all_slots() {
        let all = ResonanceLabel::all();
        for (i, l) in all.iter().enumerate() {
            assert_eq!(l.slot(), i);
        }
        assert!(ResonanceLabel::new(Branch::Plus, 0).is_err());
        assert!(ResonanceLabel::new(Branch::Plus, 5).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(SpinParams::new(-1.0, 2.8e10).is_err());
        assert!(SpinParams::new(2.87e9, 0.0).is_err());
        assert!(SpinParams::new(2.87e9, f64::NAN).is_err());
        let p: SpinParams = serde_json::from_str("{}").unwrap();
        assert_eq!(p, SpinParams::default());
    }
}
