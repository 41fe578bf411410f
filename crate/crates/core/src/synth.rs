//! Synthetic quadrature spectra from ground-truth fields.
//!
//! Generation only touches the forward model (resonance frequencies,
//! modulations and the derivative-Gaussian lineshape), never the fitting code.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use nalgebra::{Rotation3, Unit, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ensemble::{ensemble_modulations, ensemble_resonances};
use crate::error::{Error, Result};
use crate::field::{ComplexFieldVector, Frame, RealFieldVector};
use crate::geometry::OrientationSet;
use crate::lineshape::{derivative_gaussian, QuadratureSpectrum, MIN_SAMPLES};
use crate::noise::GaussianStream;
use crate::polarization::CoupledCoilModel;
use crate::spin::{ModulationSet, ResonanceLabel, SpinParams};
use crate::warning::Warning;

/// How the lock-in first harmonic is produced from the modulated line.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseModel {
    /// Small-modulation limit: amplitude proportional to the modulation.
    #[default]
    Linear,
    /// First Fourier harmonic of the Gaussian dip swept by the full
    /// modulation; saturates once the modulation approaches the linewidth.
    Nonlinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticScenario {
    pub params: SpinParams,
    pub orientations: OrientationSet,
    /// Crystal frame, tesla.
    pub b_dc: RealFieldVector,
    /// Crystal frame, tesla.
    pub b_ac: ComplexFieldVector,
    pub linewidth_sigma_hz: f64,
    /// FM reference amplitude of every resonance, signal units.
    pub contrast: f64,
    pub m_fm_hz: f64,
    pub freq_start_hz: f64,
    pub freq_stop_hz: f64,
    pub n_points: usize,
    /// Per-channel additive noise, signal units.
    pub noise_std: f64,
    pub seed: u64,
    pub fm_demod_frequency_hz: f64,
    pub ac_demod_frequency_hz: f64,
    pub response: ResponseModel,
}

impl Default for SyntheticScenario {
    fn default() -> Self {
        Self {
            params: SpinParams::default(),
            orientations: OrientationSet::default(),
            b_dc: RealFieldVector::crystal(0.6e-3, 1.7e-3, 2.9e-3),
            b_ac: ComplexFieldVector::from_components(
                [
                    Complex64::new(0.4e-6, 0.0),
                    Complex64::new(0.0, 0.3e-6),
                    Complex64::new(0.2e-6, -0.1e-6),
                ],
                Frame::Crystal,
            ),
            linewidth_sigma_hz: 1e6,
            contrast: 1.0,
            m_fm_hz: 100e3,
            freq_start_hz: 2.75e9,
            freq_stop_hz: 3.0e9,
            n_points: 2501,
            noise_std: 0.01,
            seed: 1,
            fm_demod_frequency_hz: 777.0,
            ac_demod_frequency_hz: 777.0,
            response: ResponseModel::Linear,
        }
    }
}

impl SyntheticScenario {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.b_dc.ensure_finite()?;
        self.b_dc.ensure_frame(Frame::Crystal)?;
        self.b_ac.ensure_finite()?;
        self.b_ac.real_part().ensure_frame(Frame::Crystal)?;
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.linewidth_sigma_hz) || !pos(self.contrast) || !pos(self.m_fm_hz) {
            return Err(Error::invalid(
                "linewidth, contrast and m_fm must be positive",
            ));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::invalid("noise_std must be finite and >= 0"));
        }
        if !(self.freq_start_hz.is_finite()
            && self.freq_stop_hz.is_finite()
            && self.freq_start_hz < self.freq_stop_hz)
        {
            return Err(Error::invalid("frequency span must satisfy start < stop"));
        }
        if self.n_points < MIN_SAMPLES {
            return Err(Error::invalid(format!("n_points must be >= {MIN_SAMPLES}")));
        }
        for d in [self.fm_demod_frequency_hz, self.ac_demod_frequency_hz] {
            if !(d.is_finite() && d >= 0.0) {
                return Err(Error::invalid(
                    "demodulation frequencies must be finite and >= 0",
                ));
            }
        }
        let res = ensemble_resonances(&self.params, &self.orientations, &self.b_dc)?;
        let margin = 5.0 * self.linewidth_sigma_hz;
        for (slot, f) in res.iter().enumerate() {
            if f - margin < self.freq_start_hz || f + margin > self.freq_stop_hz {
                return Err(Error::invalid(format!(
                    "resonance {} at {f:.6e} Hz is not inside the span with a 5-sigma margin",
                    ResonanceLabel::from_slot(slot)
                )));
            }
        }
        Ok(())
    }

    pub fn freqs(&self) -> Vec<f64> {
        let n = self.n_points;
        let step = (self.freq_stop_hz - self.freq_start_hz) / (n - 1) as f64;
        (0..n)
            .map(|k| self.freq_start_hz + step * k as f64)
            .collect()
    }

    pub fn with_b_ac(&self, b_ac: ComplexFieldVector) -> Self {
        Self {
            b_ac,
            ..self.clone()
        }
    }
}

/// Ground truth written next to generated spectra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub b_dc: RealFieldVector,
    pub b_ac: ComplexFieldVector,
    /// Slot order (see `ResonanceLabel::all`).
    pub labels: Vec<ResonanceLabel>,
    pub resonances_hz: Vec<f64>,
    pub modulations: ModulationSet,
    pub linewidth_sigma_hz: f64,
    pub m_fm_hz: f64,
    pub noise_std: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub fm: QuadratureSpectrum,
    pub ac: QuadratureSpectrum,
    pub truth: GroundTruth,
    pub warnings: Vec<Warning>,
}

/// Complex first-harmonic amplitude at detuning `f` for a dip at `c`
/// swept by a peak-to-peak modulation `m`.
fn harmonic(
    f: f64,
    c: f64,
    sigma: f64,
    depth: f64,
    m: Complex64,
    model: ResponseModel,
    scale: f64,
) -> Complex64 {
    match model {
        ResponseModel::Linear => m * (scale * derivative_gaussian(f, c, sigma)),
        ResponseModel::Nonlinear => {
            // PL(ν) = -depth exp(-(ν-c)²/2σ²); the line at time t sits at
            // c + Re[(m/2) e^{iωt}]. Demodulation: X + iY = 2<PL e^{-iωt}>.
            const K: usize = 64;
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..K {
                let e = Complex64::from_polar(1.0, TAU * k as f64 / K as f64);
                let shift = (0.5 * m * e).re;
                let u = (f - c - shift) / sigma;
                acc += -depth * (-0.5 * u * u).exp() * e.conj();
            }
            acc * (2.0 / K as f64)
        }
    }
}

fn render(
    s: &SyntheticScenario,
    freqs: &[f64],
    centers: &[f64; 8],
    mods: &[Complex64; 8],
    demod: f64,
    stream: u64,
    kind: &str,
) -> Result<QuadratureSpectrum> {
    let sigma = s.linewidth_sigma_hz;
    // Linear scale maps |M| = m_fm to an extremum of `contrast`; the dip
    // depth is chosen so the nonlinear model has the same small-signal limit.
    let scale = s.contrast / s.m_fm_hz;
    let depth = 2.0 * sigma * s.contrast * 0.5f64.exp() / s.m_fm_hz;
    let mut x = vec![0.0; freqs.len()];
    let mut y = vec![0.0; freqs.len()];
    for (c, m) in centers.iter().zip(mods) {
        if *m == Complex64::new(0.0, 0.0) {
            continue;
        }
        for (k, &f) in freqs.iter().enumerate() {
            let a = harmonic(f, *c, sigma, depth, *m, s.response, scale);
            x[k] += a.re;
            y[k] += a.im;
        }
    }
    if s.noise_std > 0.0 {
        let mut g = GaussianStream::new(s.seed, stream);
        for k in 0..freqs.len() {
            x[k] += s.noise_std * g.next_standard();
            y[k] += s.noise_std * g.next_standard();
        }
    }
    let mut meta = BTreeMap::new();
    meta.insert("kind".to_string(), kind.to_string());
    meta.insert("seed".to_string(), s.seed.to_string());
    QuadratureSpectrum::new(freqs.to_vec(), x, y, demod, meta)
}

/// FM reference and AC spectra for one scenario. Noise uses ChaCha stream 0
/// for the FM spectrum and stream 1 for the AC spectrum, drawing the x then
/// y deviate of each sample in frequency order.
pub fn generate_pair(s: &SyntheticScenario) -> Result<SyntheticPair> {
    s.validate()?;
    let freqs = s.freqs();
    let centers = ensemble_resonances(&s.params, &s.orientations, &s.b_dc)?;
    let mods = ensemble_modulations(&s.params, &s.orientations, &s.b_dc, &s.b_ac)?;
    let fm_mods = [Complex64::new(s.m_fm_hz, 0.0); 8];
    let fm = render(
        s,
        &freqs,
        &centers,
        &fm_mods,
        s.fm_demod_frequency_hz,
        0,
        "fm",
    )?;
    let ac = render(
        s,
        &freqs,
        &centers,
        &mods.entries,
        s.ac_demod_frequency_hz,
        1,
        "ac",
    )?;

    let mut sorted = centers;
    sorted.sort_by(f64::total_cmp);
    let warnings = sorted
        .windows(2)
        .filter(|w| w[1] - w[0] < 3.0 * s.linewidth_sigma_hz)
        .map(|w| Warning::OverlappingResonances {
            first_hz: w[0],
            second_hz: w[1],
            separation_sigmas: (w[1] - w[0]) / s.linewidth_sigma_hz,
        })
        .collect();
    let truth = GroundTruth {
        b_dc: s.b_dc,
        b_ac: s.b_ac,
        labels: ResonanceLabel::all().to_vec(),
        resonances_hz: centers.to_vec(),
        modulations: mods,
        linewidth_sigma_hz: s.linewidth_sigma_hz,
        m_fm_hz: s.m_fm_hz,
        noise_std: s.noise_std,
        seed: s.seed,
    };
    Ok(SyntheticPair {
        fm,
        ac,
        truth,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RotationSpec {
    pub n_angles: usize,
    /// Crystal-frame axis the AC field is rotated about.
    pub axis: [f64; 3],
}

impl Default for RotationSpec {
    fn default() -> Self {
        Self {
            n_angles: 12,
            axis: [0.0, 0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotationRecord {
    pub index: usize,
    pub angle_rad: f64,
    pub scenario: SyntheticScenario,
    pub pair: SyntheticPair,
}

/// `b_ac` rotated about `spec.axis` in `n_angles` equal steps over a full
/// turn; record `k` uses seed `base.seed + k`.
pub fn generate_rotation_series(
    base: &SyntheticScenario,
    spec: &RotationSpec,
) -> Result<Vec<RotationRecord>> {
    if spec.n_angles < 3 {
        return Err(Error::invalid("rotation series needs at least 3 angles"));
    }
    let axis = Vector3::from(spec.axis);
    if !axis.iter().all(|v| v.is_finite()) || axis.norm() == 0.0 {
        return Err(Error::invalid("rotation axis must be finite and non-zero"));
    }
    let axis = Unit::new_normalize(axis);
    (0..spec.n_angles)
        .map(|k| {
            let angle = TAU * k as f64 / spec.n_angles as f64;
            let r = Rotation3::from_axis_angle(&axis, angle);
            let mut scenario = base.with_b_ac(base.b_ac.map(r.matrix(), Frame::Crystal));
            scenario.seed = base.seed.wrapping_add(k as u64);
            let pair = generate_pair(&scenario)?;
            Ok(RotationRecord {
                index: k,
                angle_rad: angle,
                scenario,
                pair,
            })
        })
        .collect()
}

/// Rotating-dipole field: `b0 (u + i ratio w)` with `u` the in-plane
/// direction at `angle` about `axis` and `w = axis × u`.
pub fn rotating_coil_field(
    b0: f64,
    out_of_phase_ratio: f64,
    axis: &Vector3<f64>,
    angle: f64,
) -> ComplexFieldVector {
    let n = axis.normalize();
    let seed = if n.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let u0 = (seed - n * n.dot(&seed)).normalize();
    let u = Rotation3::from_axis_angle(&Unit::new_unchecked(n), angle) * u0;
    let w = n.cross(&u);
    ComplexFieldVector::from_vectors(u * b0, w * (b0 * out_of_phase_ratio), Frame::Crystal)
}

/// Scenarios for coil `a` alone, coil `b` alone and both driven.
pub fn crossed_coil_scenarios(
    base: &SyntheticScenario,
    model: &CoupledCoilModel,
) -> Result<[SyntheticScenario; 3]> {
    model.dir_a.ensure_frame(Frame::Crystal)?;
    let (a, b, ab) = model.fields();
    let mk = |f: ComplexFieldVector, k: u64| {
        let mut s = base.with_b_ac(f);
        s.seed = base.seed.wrapping_add(k);
        s
    };
    Ok([mk(a, 0), mk(b, 1), mk(ab, 2)])
}

/// Scenario file accepted by the command-line `synth` command.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioFile {
    pub scenario: SyntheticScenario,
    pub rotation: Option<RotationSpec>,
    pub coils: Option<CoupledCoilModel>,
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let f: Self = serde_json::from_str(text)?;
        f.scenario.validate()?;
        if f.rotation.is_some() && f.coils.is_some() {
            return Err(Error::invalid(
                "a scenario file may set rotation or coils, not both",
            ));
        }
        Ok(f)
    }
}
