//! Field reconstruction: the static bias field from the eight resonance
//! centers, then the complex AC field from the eight complex modulations.
//!
//! An ensemble spectrum is invariant under the 48-element cubic point group
//! acting on the field (it permutes the four NV lines), so the bias field is
//! only determined up to that group. Without a guess the bias field is
//! reported in the fundamental domain `0 <= B_x <= B_y <= B_z`; with a guess,
//! the group image closest to it. Once the bias field is fixed the AC field
//! is unique, because the modulations are odd in `B_ac`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ensemble::{ensemble_modulations_raw, ensemble_shifts};
use crate::error::{Error, Result};
use crate::field::{ComplexFieldVector, Frame, RealFieldVector};
use crate::geometry::{cubic_point_group, OrientationSet};
use crate::lsq::{self, LeastSquares, LmOptions};
use crate::spin::{Branch, ModulationSet, ResonanceLabel, SpinParams};
use crate::warning::Warning;

/// Map from sorted-resonance index to `(branch, orientation)` label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ResonanceLabel>", into = "Vec<ResonanceLabel>")]
pub struct Assignment {
    labels: [ResonanceLabel; 8],
}

impl Assignment {
    pub fn new(labels: [ResonanceLabel; 8]) -> Result<Self> {
        let mut seen = [false; 8];
        for l in &labels {
            if !(1..=4).contains(&l.orientation) {
                return Err(Error::OrientationOutOfRange(l.orientation as usize));
            }
            if std::mem::replace(&mut seen[l.slot()], true) {
                return Err(Error::invalid(format!("label {l} assigned twice")));
            }
        }
        Ok(Self { labels })
    }

    pub fn label(&self, sorted_index: usize) -> ResonanceLabel {
        self.labels[sorted_index]
    }

    pub fn labels(&self) -> &[ResonanceLabel; 8] {
        &self.labels
    }

    pub fn index_of(&self, label: ResonanceLabel) -> usize {
        self.labels
            .iter()
            .position(|l| *l == label)
            .expect("bijective assignment")
    }
}

impl From<Assignment> for Vec<ResonanceLabel> {
    fn from(a: Assignment) -> Self {
        a.labels.to_vec()
    }
}

impl TryFrom<Vec<ResonanceLabel>> for Assignment {
    type Error = Error;

    fn try_from(v: Vec<ResonanceLabel>) -> Result<Self> {
        let labels: [ResonanceLabel; 8] = v.try_into().map_err(|v: Vec<_>| {
            Error::invalid(format!("assignment needs 8 labels, got {}", v.len()))
        })?;
        Self::new(labels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcFitResult {
    /// Crystal frame, tesla.
    pub b_dc: RealFieldVector,
    pub assignment: Assignment,
    pub center_residual_rms: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcFitResult {
    /// Crystal frame, tesla.
    pub b_ac: ComplexFieldVector,
    /// Sum of squared complex residuals, Hz².
    pub cost: f64,
    pub converged: bool,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<Warning>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DcFitOptions {
    /// Lines of different orientations closer than this are unresolvable.
    pub resolution_hz: f64,
    pub max_iterations: usize,
    /// Number of screened assignments refined by least squares.
    pub refine_candidates: usize,
}

impl Default for DcFitOptions {
    fn default() -> Self {
        Self {
            resolution_hz: 1e3,
            max_iterations: 200,
            refine_candidates: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcFitOptions {
    pub max_iterations: usize,
    /// Relative cost change that ends refinement.
    pub ftol: f64,
    /// Absolute parameter step (T) that ends refinement.
    pub step_tol_t: f64,
    /// Central-difference step for the Jacobian (T).
    pub jacobian_step_t: f64,
}

impl Default for AcFitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            ftol: 1e-12,
            step_tol_t: 1e-15,
            jacobian_step_t: 1e-9,
        }
    }
}

/// Bias-field problem with a fixed assignment.
struct DcProblem<'a> {
    params: &'a SpinParams,
    orient: &'a OrientationSet,
    /// Observed `center - D` in sorted order.
    shifts: [f64; 8],
    slots: [usize; 8],
}

impl LeastSquares for DcProblem<'_> {
    fn n_params(&self) -> usize {
        3
    }

    fn n_residuals(&self) -> usize {
        8
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let pred = ensemble_shifts(self.params, self.orient, &Vector3::new(p[0], p[1], p[2]));
        for k in 0..8 {
            out[k] = self.shifts[k] - pred[self.slots[k]];
        }
    }

    fn difference_steps(&self, _: &[f64]) -> Vec<f64> {
        vec![1e-9; 3]
    }

    fn step_floor(&self) -> Vec<f64> {
        vec![1e-15; 3]
    }
}

/// All 105 ways to split sorted indices `0..8` into four unordered pairs.
fn pairings() -> Vec<[(usize, usize); 4]> {
    fn rec(rest: &[usize], acc: &mut Vec<(usize, usize)>, out: &mut Vec<[(usize, usize); 4]>) {
        if rest.is_empty() {
            out.push([acc[0], acc[1], acc[2], acc[3]]);
            return;
        }
        let first = rest[0];
        for j in 1..rest.len() {
            acc.push((first, rest[j]));
            let remaining: Vec<usize> = rest[1..]
                .iter()
                .copied()
                .filter(|&v| v != rest[j])
                .collect();
            rec(&remaining, acc, out);
            acc.pop();
        }
    }
    let mut out = Vec::with_capacity(105);
    rec(&[0, 1, 2, 3, 4, 5, 6, 7], &mut Vec::new(), &mut out);
    out
}

fn sum_sq_assigned(pred: &[f64; 8], shifts: &[f64; 8], slots: &[usize; 8]) -> f64 {
    (0..8).map(|k| (shifts[k] - pred[slots[k]]).powi(2)).sum()
}

/// Assignment by rank: the k-th lowest predicted line takes the k-th center.
fn rank_assignment(pred: &[f64; 8]) -> [usize; 8] {
    let mut slots: [usize; 8] = std::array::from_fn(|k| k);
    slots.sort_by(|&a, &b| pred[a].total_cmp(&pred[b]).then(a.cmp(&b)));
    slots
}

/// Recovers the bias field and the resonance labeling from eight centers.
pub fn fit_dc_field(
    centers: &[f64],
    params: &SpinParams,
    orient: &OrientationSet,
    initial_guess: Option<&RealFieldVector>,
    opts: &DcFitOptions,
) -> Result<DcFitResult> {
    params.validate()?;
    if centers.len() != 8 || centers.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("fit_dc_field needs 8 finite centers"));
    }
    if let Some(g) = initial_guess {
        g.ensure_finite()?;
        g.ensure_frame(Frame::Crystal)?;
    }
    let mut sorted = centers.to_vec();
    sorted.sort_by(f64::total_cmp);
    let d = params.d();
    let shifts: [f64; 8] = std::array::from_fn(|k| sorted[k] - d);
    let gamma = params.gamma();
    let axes: Vec<Vector3<f64>> = orient
        .rotations()
        .iter()
        .map(|r| r.row(2).transpose())
        .collect();

    // Screen every pairing and sign pattern with the weak-field estimate
    // B ≈ (3/4) Σ s_i |B·n_i| n_i (valid because Σ n_i n_iᵀ = 4/3 I).
    let mut screened: Vec<(f64, Vector3<f64>, [usize; 8])> = Vec::new();
    for pairing in pairings() {
        let mut pairs = pairing;
        pairs.sort_by(|a, b| {
            let sa = shifts[a.1] - shifts[a.0];
            let sb = shifts[b.1] - shifts[b.0];
            sb.total_cmp(&sa)
        });
        let mut slots = [0usize; 8];
        for (i, &(lo, hi)) in pairs.iter().enumerate() {
            slots[lo] = 2 * i;
            slots[hi] = 2 * i + 1;
        }
        let proj: Vec<f64> = pairs
            .iter()
            .map(|&(lo, hi)| (shifts[hi] - shifts[lo]) / (2.0 * gamma))
            .collect();
        for signs in 0..8u8 {
            let mut b = axes[0] * proj[0];
            for i in 1..4 {
                let s = if signs >> (i - 1) & 1 == 1 { -1.0 } else { 1.0 };
                b += axes[i] * (s * proj[i]);
            }
            b *= 0.75;
            let pred = ensemble_shifts(params, orient, &b);
            screened.push((sum_sq_assigned(&pred, &shifts, &slots), b, slots));
        }
    }
    screened.sort_by(|a, b| a.0.total_cmp(&b.0));

    let lm = LmOptions {
        max_iterations: opts.max_iterations,
        ftol: 1e-14,
        xtol: 1e-12,
    };
    let mut best: Option<(f64, Vector3<f64>, usize, bool)> = None;
    for (_, b0, slots) in screened.iter().take(opts.refine_candidates.max(1)) {
        let problem = DcProblem {
            params,
            orient,
            shifts,
            slots: *slots,
        };
        let out = lsq::minimize(&problem, b0.as_slice(), &lm);
        if best.as_ref().map_or(true, |b| out.cost < b.0) {
            best = Some((
                out.cost,
                Vector3::new(out.params[0], out.params[1], out.params[2]),
                out.iterations,
                out.converged,
            ));
        }
    }
    let (_, b_fit, iterations, converged) = best.expect("at least one candidate");

    let b = match initial_guess {
        Some(g) => {
            let g = g.to_vector();
            cubic_point_group()
                .iter()
                .map(|q| q * b_fit)
                .max_by(|a, b| a.dot(&g).total_cmp(&b.dot(&g)))
                .expect("non-empty group")
        }
        None => {
            let mut c = [b_fit.x.abs(), b_fit.y.abs(), b_fit.z.abs()];
            c.sort_by(f64::total_cmp);
            Vector3::new(c[0], c[1], c[2])
        }
    };

    let pred = ensemble_shifts(params, orient, &b);
    let slots = rank_assignment(&pred);
    let cost = sum_sq_assigned(&pred, &shifts, &slots);
    let labels = slots.map(ResonanceLabel::from_slot);
    let result = DcFitResult {
        b_dc: RealFieldVector::from_vector(b, Frame::Crystal),
        assignment: Assignment::new(labels)?,
        center_residual_rms: (cost / 8.0).sqrt(),
        iterations,
        converged,
    };

    let spread = pred.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v))
        - pred.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    if spread > opts.resolution_hz {
        let mut pairs = Vec::new();
        for a in 0..8 {
            for b in (a + 1)..8 {
                if a / 2 != b / 2 && (pred[a] - pred[b]).abs() <= opts.resolution_hz {
                    pairs.push((ResonanceLabel::from_slot(a), ResonanceLabel::from_slot(b)));
                }
            }
        }
        if !pairs.is_empty() {
            return Err(Error::AmbiguousAssignment { pairs });
        }
    }
    if !converged {
        return Err(Error::DcNotConverged {
            best: Box::new(result),
        });
    }
    Ok(result)
}

/// Least-squares cost `Σ |M_data - M_model(B)|²` over all eight resonances.
pub fn ac_cost(
    mods: &ModulationSet,
    b_dc: &RealFieldVector,
    params: &SpinParams,
    orient: &OrientationSet,
    b_ac: &ComplexFieldVector,
) -> f64 {
    let model = ensemble_modulations_raw(
        params,
        orient,
        &b_dc.to_vector(),
        &b_ac.real_part().to_vector(),
        &b_ac.imag_part().to_vector(),
    );
    mods.entries
        .iter()
        .zip(&model.entries)
        .map(|(d, m)| (d - m).norm_sqr())
        .sum()
}

struct AcProblem<'a> {
    params: &'a SpinParams,
    orient: &'a OrientationSet,
    b_dc: Vector3<f64>,
    data: [Complex64; 8],
    opts: AcFitOptions,
}

impl LeastSquares for AcProblem<'_> {
    fn n_params(&self) -> usize {
        6
    }

    fn n_residuals(&self) -> usize {
        16
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let model = ensemble_modulations_raw(
            self.params,
            self.orient,
            &self.b_dc,
            &Vector3::new(p[0], p[1], p[2]),
            &Vector3::new(p[3], p[4], p[5]),
        );
        for s in 0..8 {
            let r = self.data[s] - model.entries[s];
            out[2 * s] = r.re;
            out[2 * s + 1] = r.im;
        }
    }

    fn difference_steps(&self, _: &[f64]) -> Vec<f64> {
        vec![self.opts.jacobian_step_t; 6]
    }

    fn step_floor(&self) -> Vec<f64> {
        vec![self.opts.step_tol_t; 6]
    }
}

/// Gradient of each resonance frequency with respect to the crystal-frame
/// field at `b_dc`, rows in slot order (Hz/T).
pub fn resonance_gradient(
    params: &SpinParams,
    orient: &OrientationSet,
    b_dc: &Vector3<f64>,
    step_t: f64,
) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(8, 3);
    for j in 0..3 {
        let mut e = Vector3::zeros();
        e[j] = step_t;
        let up = ensemble_shifts(params, orient, &(b_dc + e));
        let down = ensemble_shifts(params, orient, &(b_dc - e));
        for s in 0..8 {
            g[(s, j)] = (up[s] - down[s]) / (2.0 * step_t);
        }
    }
    g
}

/// Linear-response inversion `M ≈ 2 ∇f · B_ac`, solved separately for the
/// in-phase and quadrature parts by least squares.
pub fn linearized_ac_guess(
    mods: &ModulationSet,
    b_dc: &RealFieldVector,
    params: &SpinParams,
    orient: &OrientationSet,
) -> ComplexFieldVector {
    let g = resonance_gradient(params, orient, &b_dc.to_vector(), 1e-9) * 2.0;
    let svd = g.svd(true, true);
    let re = DVector::from_iterator(8, mods.entries.iter().map(|m| m.re));
    let im = DVector::from_iterator(8, mods.entries.iter().map(|m| m.im));
    let eps = 1e-12 * svd.singular_values.max();
    let sol_re = svd.solve(&re, eps).unwrap_or_else(|_| DVector::zeros(3));
    let sol_im = svd.solve(&im, eps).unwrap_or_else(|_| DVector::zeros(3));
    ComplexFieldVector::from_vectors(
        Vector3::new(sol_re[0], sol_re[1], sol_re[2]),
        Vector3::new(sol_im[0], sol_im[1], sol_im[2]),
        Frame::Crystal,
    )
}

/// Minimizes `Σ_{±} Σ_i |M_data - M_model(ℛ_i B)|²` over the six real
/// components of the crystal-frame phasor.
pub fn fit_ac_field(
    mods: &ModulationSet,
    b_dc: &RealFieldVector,
    params: &SpinParams,
    orient: &OrientationSet,
    initial_guess: Option<&ComplexFieldVector>,
    opts: &AcFitOptions,
) -> Result<AcFitResult> {
    params.validate()?;
    mods.validate()?;
    b_dc.ensure_finite()?;
    b_dc.ensure_frame(Frame::Crystal)?;
    let start = match initial_guess {
        Some(g) => {
            g.ensure_finite()?;
            g.real_part().ensure_frame(Frame::Crystal)?;
            *g
        }
        None => linearized_ac_guess(mods, b_dc, params, orient),
    };
    let problem = AcProblem {
        params,
        orient,
        b_dc: b_dc.to_vector(),
        data: mods.entries,
        opts: *opts,
    };
    let lm = LmOptions {
        max_iterations: opts.max_iterations,
        ftol: opts.ftol,
        xtol: 0.0,
    };
    let out = lsq::minimize(&problem, &start.to_array6(), &lm);
    let mut warnings = Vec::new();
    if let Some(std) = &mods.std_hz {
        let expected: f64 = std.iter().map(|s| 2.0 * s * s).sum();
        if expected > 0.0 && out.cost > 100.0 * expected + 1.0 {
            warnings.push(Warning::PoorFit {
                cost_hz2: out.cost,
                expected_hz2: expected,
            });
        }
    }
    let result = AcFitResult {
        b_ac: ComplexFieldVector::from_array6(&out.params, Frame::Crystal),
        cost: out.cost,
        converged: out.converged,
        iterations: out.iterations,
        warnings,
    };
    if !result.converged || !result.b_ac.is_finite() {
        return Err(Error::AcNotConverged {
            best: Box::new(result),
        });
    }
    Ok(result)
}

/// Alternative sign gauge: flip both fields so that the real part of
/// `B_ac` is non-negative along its largest-magnitude axis. The spectra
/// cannot tell `(B_dc, B_ac)` from `(-B_dc, -B_ac)`.
pub fn apply_ac_sign_convention(
    b_dc: &RealFieldVector,
    b_ac: &ComplexFieldVector,
) -> (RealFieldVector, ComplexFieldVector) {
    let re = b_ac.real_part().to_vector();
    let k = re.iamax();
    if re[k] < 0.0 {
        (b_dc.scaled(-1.0), b_ac.neg())
    } else {
        (*b_dc, *b_ac)
    }
}

/// Image of a labeled modulation set under a cubic symmetry `q`: the
/// entry of orientation `i` moves to the orientation whose axis is `±q n_i`.
pub fn permute_modulations(
    mods: &ModulationSet,
    orient: &OrientationSet,
    q: &Matrix3<f64>,
) -> Result<ModulationSet> {
    let axes: Vec<Vector3<f64>> = orient
        .rotations()
        .iter()
        .map(|r| r.row(2).transpose())
        .collect();
    let mut out = ModulationSet::zeros();
    for (i, n) in axes.iter().enumerate() {
        let image = q * n;
        let j = axes
            .iter()
            .position(|m| (m.dot(&image).abs() - 1.0).abs() < 1e-9)
            .ok_or_else(|| Error::invalid("matrix does not permute the NV axes"))?;
        for branch in Branch::BOTH {
            let from = ResonanceLabel {
                orientation: i as u8 + 1,
                branch,
            };
            let to = ResonanceLabel {
                orientation: j as u8 + 1,
                branch,
            };
            out.set(to, mods.get(from));
        }
    }
    Ok(out)
}
