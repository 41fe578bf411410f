//! Forward model of the four-orientation ensemble: crystal-frame fields in,
//! eight labeled resonance frequencies or modulations out.

use nalgebra::Vector3;

use crate::error::Result;
use crate::field::{ComplexFieldVector, Frame, RealFieldVector};
use crate::geometry::OrientationSet;
use crate::spin::{self, Branch, ModulationSet, ResonanceLabel, SpinParams};

/// Resonance shifts `f - D` in label slot order for a crystal-frame field.
pub fn ensemble_shifts(params: &SpinParams, orient: &OrientationSet, b: &Vector3<f64>) -> [f64; 8] {
    let mut out = [0.0; 8];
    for (i, r) in orient.rotations().iter().enumerate() {
        let (m, p) = spin::resonance_shifts(params, &(r * b));
        out[2 * i] = m;
        out[2 * i + 1] = p;
    }
    out
}

/// Resonance frequencies in label slot order for a crystal-frame field.
pub fn ensemble_resonances(
    params: &SpinParams,
    orient: &OrientationSet,
    b: &RealFieldVector,
) -> Result<[f64; 8]> {
    b.ensure_finite()?;
    b.ensure_frame(Frame::Crystal)?;
    Ok(ensemble_shifts(params, orient, &b.to_vector()).map(|s| params.d() + s))
}

pub(crate) fn ensemble_modulations_raw(
    params: &SpinParams,
    orient: &OrientationSet,
    b_dc: &Vector3<f64>,
    re: &Vector3<f64>,
    im: &Vector3<f64>,
) -> ModulationSet {
    let mut out = ModulationSet::zeros();
    for (i, r) in orient.rotations().iter().enumerate() {
        let m = spin::complex_modulation_raw(params, &(r * b_dc), &(r * re), &(r * im));
        for branch in Branch::BOTH {
            let label = ResonanceLabel {
                orientation: i as u8 + 1,
                branch,
            };
            out.set(label, m.get(branch));
        }
    }
    out
}

/// Complex modulations of all eight resonances for crystal-frame fields.
pub fn ensemble_modulations(
    params: &SpinParams,
    orient: &OrientationSet,
    b_dc: &RealFieldVector,
    b_ac: &ComplexFieldVector,
) -> Result<ModulationSet> {
    b_dc.ensure_finite()?;
    b_ac.ensure_finite()?;
    b_dc.ensure_frame(Frame::Crystal)?;
    b_ac.real_part().ensure_frame(Frame::Crystal)?;
    Ok(ensemble_modulations_raw(
        params,
        orient,
        &b_dc.to_vector(),
        &b_ac.real_part().to_vector(),
        &b_ac.imag_part().to_vector(),
    ))
}
