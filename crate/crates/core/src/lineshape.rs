//! Derivative-Gaussian fits to both lock-in quadratures of each ODMR
//! resonance, and conversion of fitted amplitudes into calibrated frequency
//! modulations through the FM reference.
//!
//! Each resonance contributes `a_x g(f)` to the X channel and `a_y g(f)` to
//! the Y channel with a shared center and width, where
//!
//! ```text
//! g(f) = ((center - f) / sigma) exp(1/2 - (f - center)^2 / (2 sigma^2))
//! ```
//!
//! has extrema of exactly `±1` at `f = center ∓ sigma`, so the complex
//! amplitude `a_x + i a_y` reads directly in signal units.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsq::{self, LeastSquares, LmOptions};
use crate::reconstruct::Assignment;
use crate::spin::ModulationSet;
use crate::warning::Warning;

pub const MIN_SAMPLES: usize = 50;

/// Frequency sweep with both demodulated lock-in channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpectrum")]
pub struct QuadratureSpectrum {
    freqs: Vec<f64>,
    x_channel: Vec<f64>,
    y_channel: Vec<f64>,
    demod_frequency_hz: f64,
    metadata: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct RawSpectrum {
    freqs: Vec<f64>,
    x_channel: Vec<f64>,
    y_channel: Vec<f64>,
    demod_frequency_hz: f64,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

impl TryFrom<RawSpectrum> for QuadratureSpectrum {
    type Error = Error;

    fn try_from(r: RawSpectrum) -> Result<Self> {
        Self::new(
            r.freqs,
            r.x_channel,
            r.y_channel,
            r.demod_frequency_hz,
            r.metadata,
        )
    }
}

impl QuadratureSpectrum {
    pub fn new(
        freqs: Vec<f64>,
        x_channel: Vec<f64>,
        y_channel: Vec<f64>,
        demod_frequency_hz: f64,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self> {
        if freqs.len() < MIN_SAMPLES {
            return Err(Error::invalid(format!(
                "spectrum has {} samples, at least {MIN_SAMPLES} required",
                freqs.len()
            )));
        }
        if x_channel.len() != freqs.len() || y_channel.len() != freqs.len() {
            return Err(Error::invalid("channel lengths differ from frequency axis"));
        }
        if freqs
            .iter()
            .chain(&x_channel)
            .chain(&y_channel)
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("spectrum contains non-finite values"));
        }
        if let Some(k) = freqs.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "frequencies not strictly increasing at sample {}",
                k + 1
            )));
        }
        if !demod_frequency_hz.is_finite() || demod_frequency_hz < 0.0 {
            return Err(Error::invalid(
                "demodulation frequency must be finite and >= 0",
            ));
        }
        Ok(Self {
            freqs,
            x_channel,
            y_channel,
            demod_frequency_hz,
            metadata,
        })
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn x_channel(&self) -> &[f64] {
        &self.x_channel
    }

    pub fn y_channel(&self) -> &[f64] {
        &self.y_channel
    }

    pub fn demod_frequency_hz(&self) -> f64 {
        self.demod_frequency_hz
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn metadata_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.metadata
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn span(&self) -> (f64, f64) {
        (self.freqs[0], self.freqs[self.freqs.len() - 1])
    }

    /// Copy with replaced channel data (same frequency axis).
    pub fn with_channels(&self, x_channel: Vec<f64>, y_channel: Vec<f64>) -> Result<Self> {
        Self::new(
            self.freqs.clone(),
            x_channel,
            y_channel,
            self.demod_frequency_hz,
            self.metadata.clone(),
        )
    }

    /// Copy with every frequency offset by `delta`.
    pub fn shifted(&self, delta: f64) -> Result<Self> {
        Self::new(
            self.freqs.iter().map(|f| f + delta).collect(),
            self.x_channel.clone(),
            self.y_channel.clone(),
            self.demod_frequency_hz,
            self.metadata.clone(),
        )
    }

    /// Complex sample `x + iy`.
    pub fn z(&self, k: usize) -> Complex64 {
        Complex64::new(self.x_channel[k], self.y_channel[k])
    }
}

/// Unit-extremum derivative Gaussian.
pub fn derivative_gaussian(f: f64, center: f64, sigma: f64) -> f64 {
    let u = (f - center) / sigma;
    -u * (0.5 - 0.5 * u * u).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineshapeFit {
    pub center: f64,
    pub sigma: f64,
    /// `a_x + i a_y` in signal units.
    pub amplitude: Complex64,
    /// Per-quadrature standard uncertainty of the amplitude.
    pub amplitude_std: f64,
    /// RMS residual of both channels within the fit window.
    pub residual_rms: f64,
    pub converged: bool,
}

impl LineshapeFit {
    pub fn eval(&self, f: f64) -> Complex64 {
        self.amplitude * derivative_gaussian(f, self.center, self.sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LineshapeOptions {
    pub max_iterations: usize,
    /// Relative parameter update below which refinement stops.
    pub xtol: f64,
    /// Fit window half-width in units of the resonance width.
    pub window_sigmas: f64,
    /// Detection threshold in units of the matched-filter noise floor.
    pub detection_threshold: f64,
}

impl Default for LineshapeOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            xtol: 1e-6,
            window_sigmas: 6.0,
            detection_threshold: 5.0,
        }
    }
}

impl LineshapeOptions {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if self.max_iterations == 0
            || !pos(self.xtol)
            || !pos(self.window_sigmas)
            || !pos(self.detection_threshold)
        {
            return Err(Error::invalid(format!(
                "invalid lineshape options {self:?}"
            )));
        }
        Ok(())
    }
}

/// Robust per-channel noise estimate from first differences (MAD based),
/// returned as `sqrt(σ_x² + σ_y²)`.
pub fn noise_floor(spectrum: &QuadratureSpectrum) -> f64 {
    let mad = |ch: &[f64]| {
        let mut d: Vec<f64> = ch.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        d.sort_by(f64::total_cmp);
        1.4826 * d[d.len() / 2] / std::f64::consts::SQRT_2
    };
    mad(spectrum.x_channel()).hypot(mad(spectrum.y_channel()))
}

fn sample_spacing(freqs: &[f64]) -> f64 {
    let mut d: Vec<f64> = freqs.windows(2).map(|w| w[1] - w[0]).collect();
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

/// Normalized matched-filter magnitude at sample `j` for width `sigma`.
fn matched_response(freqs: &[f64], x: &[f64], y: &[f64], j: usize, sigma: f64) -> f64 {
    let f0 = freqs[j];
    let lo = freqs.partition_point(|&f| f < f0 - 4.0 * sigma);
    let hi = freqs.partition_point(|&f| f <= f0 + 4.0 * sigma);
    let (mut ax, mut ay, mut norm) = (0.0, 0.0, 0.0);
    for k in lo..hi {
        let g = derivative_gaussian(freqs[k], f0, sigma);
        ax += x[k] * g;
        ay += y[k] * g;
        norm += g * g;
    }
    if norm > 0.0 {
        ax.hypot(ay) / norm.sqrt()
    } else {
        0.0
    }
}

/// Matched-filter responses for every width of a grid. Width `s` is only
/// scored on every `s / (4 df)`-th sample, which keeps the cost per width
/// independent of `s`.
struct FilterBank {
    grid: Vec<f64>,
    strides: Vec<usize>,
    scores: Vec<Vec<f64>>,
}

impl FilterBank {
    fn new(freqs: &[f64], x: &[f64], y: &[f64], grid: Vec<f64>) -> Self {
        let df = sample_spacing(freqs);
        let strides = grid
            .iter()
            .map(|s| ((s / (4.0 * df)) as usize).max(1))
            .collect();
        let scores = vec![vec![0.0; freqs.len()]; grid.len()];
        let mut bank = Self {
            grid,
            strides,
            scores,
        };
        bank.rescore(freqs, x, y, f64::NEG_INFINITY, f64::INFINITY);
        bank
    }

    /// Recomputes every response whose kernel overlaps `[lo_f, hi_f]`.
    fn rescore(&mut self, freqs: &[f64], x: &[f64], y: &[f64], lo_f: f64, hi_f: f64) {
        for (w, &s) in self.grid.iter().enumerate() {
            let stride = self.strides[w];
            let lo = freqs.partition_point(|&f| f < lo_f - 4.0 * s);
            let hi = freqs.partition_point(|&f| f <= hi_f + 4.0 * s);
            for j in (lo.div_ceil(stride) * stride..hi).step_by(stride) {
                self.scores[w][j] = matched_response(freqs, x, y, j, s);
            }
        }
    }

    /// Strongest response and its width at sample `j`.
    fn best(&self, j: usize) -> (f64, f64) {
        let mut out = (0.0, self.grid[0]);
        for (w, row) in self.scores.iter().enumerate() {
            if row[j] > out.0 {
                out = (row[j], self.grid[w]);
            }
        }
        out
    }
}

fn width_grid(spectrum: &QuadratureSpectrum) -> Vec<f64> {
    let (a, b) = spectrum.span();
    let lo = 2.0 * sample_spacing(spectrum.freqs());
    let hi = ((b - a) / 16.0).max(lo);
    let mut out = vec![lo];
    while *out.last().unwrap() * 1.2 <= hi {
        let next = out.last().unwrap() * 1.2;
        out.push(next);
    }
    out
}

/// Width whose matched filter responds most strongly at `center`.
pub fn estimate_sigma(spectrum: &QuadratureSpectrum, center: f64) -> f64 {
    let freqs = spectrum.freqs();
    let j = freqs.partition_point(|&f| f < center).min(freqs.len() - 1);
    let grid = width_grid(spectrum);
    let resp: Vec<f64> = grid
        .iter()
        .map(|&s| matched_response(freqs, spectrum.x_channel(), spectrum.y_channel(), j, s))
        .collect();
    let best = (0..grid.len())
        .max_by(|&a, &b| resp[a].total_cmp(&resp[b]))
        .unwrap();
    if best == 0 || best + 1 == grid.len() {
        return grid[best];
    }
    // Parabolic refinement in log-width.
    let (r0, r1, r2) = (resp[best - 1], resp[best], resp[best + 1]);
    let denom = r0 - 2.0 * r1 + r2;
    let off = if denom < 0.0 {
        0.5 * (r0 - r2) / denom
    } else {
        0.0
    };
    grid[best] * 1.2f64.powf(off.clamp(-0.5, 0.5))
}

/// Candidate resonances as `(center, sigma)` pairs sorted by center.
///
/// A multi-width matched filter scores every sample. The strongest response
/// above the noise threshold is fit as a single line and subtracted from the
/// working copy of the channels before the filter is re-scored around it, so
/// a strong line does not drag the apparent position of a weaker neighbour.
pub fn detect_resonances(
    spectrum: &QuadratureSpectrum,
    n_resonances: usize,
    opts: &LineshapeOptions,
) -> Result<Vec<(f64, f64)>> {
    let freqs = spectrum.freqs();
    let n = freqs.len();
    let grid = width_grid(spectrum);
    let mut x = spectrum.x_channel().to_vec();
    let mut y = spectrum.y_channel().to_vec();
    let mut bank = FilterBank::new(freqs, &x, &y, grid);
    let mut best: Vec<(f64, f64)> = (0..n).map(|j| bank.best(j)).collect();
    let peak = best.iter().map(|b| b.0).fold(0.0, f64::max);
    let threshold = (opts.detection_threshold * noise_floor(spectrum)).max(1e-9 * peak);
    let mut rejected = vec![false; n];
    let mut accepted: Vec<(f64, f64)> = Vec::new();
    let w = opts.window_sigmas;

    for _ in 0..4 * n_resonances {
        if accepted.len() == n_resonances {
            break;
        }
        let Some(j) = (1..n - 1)
            .filter(|&j| !rejected[j] && best[j].0 > threshold)
            .max_by(|&a, &b| best[a].0.total_cmp(&best[b].0))
        else {
            break;
        };
        let (f, s) = (freqs[j], best[j].1);
        // Leftovers of an imperfect subtraction sit on top of an accepted line.
        if accepted
            .iter()
            .any(|&(fa, sa)| (f - fa).abs() < 1.5 * sa.min(s))
        {
            rejected[j] = true;
            continue;
        }
        let (c, sg, amp) = single_line_fit(freqs, &x, &y, f, s, w, opts).unwrap_or((
            f,
            s,
            Complex64::new(0.0, 0.0),
        ));
        let (c, sg) = if (c - f).abs() <= 2.0 * s && sg > s / 3.0 && sg < 3.0 * s {
            (c, sg)
        } else {
            (f, s)
        };
        let amp = if amp.norm() > 0.0 {
            amp
        } else {
            solve_amplitudes(freqs, &x, &y, &[(c, sg)], w)[0].0
        };
        let lo = freqs.partition_point(|&v| v < c - (w + 1.0) * sg);
        let hi = freqs.partition_point(|&v| v <= c + (w + 1.0) * sg);
        for k in lo..hi {
            let g = derivative_gaussian(freqs[k], c, sg);
            x[k] -= amp.re * g;
            y[k] -= amp.im * g;
        }
        let (lo_f, hi_f) = (c - (w + 1.0) * sg, c + (w + 1.0) * sg);
        bank.rescore(freqs, &x, &y, lo_f, hi_f);
        let widest = *bank.grid.last().expect("non-empty width grid");
        let lo = freqs.partition_point(|&v| v < lo_f - 4.0 * widest);
        let hi = freqs.partition_point(|&v| v <= hi_f + 4.0 * widest);
        for (j, b) in best.iter_mut().enumerate().take(hi).skip(lo) {
            *b = bank.best(j);
        }
        accepted.push((c, sg));
    }
    if accepted.len() < n_resonances {
        let mut found: Vec<f64> = accepted.iter().map(|a| a.0).collect();
        found.sort_by(f64::total_cmp);
        return Err(Error::Detection {
            wanted: n_resonances,
            found,
        });
    }
    accepted.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(accepted)
}

/// Isolated single-line refinement used during detection.
fn single_line_fit(
    freqs: &[f64],
    x: &[f64],
    y: &[f64],
    c0: f64,
    s0: f64,
    w: f64,
    opts: &LineshapeOptions,
) -> Option<(f64, f64, Complex64)> {
    let lo = freqs.partition_point(|&f| f < c0 - w * s0);
    let hi = freqs.partition_point(|&f| f <= c0 + w * s0);
    if hi - lo < 6 {
        return None;
    }
    let (fw, xw, yw) = (&freqs[lo..hi], &x[lo..hi], &y[lo..hi]);
    let a0 = solve_amplitudes(fw, xw, yw, &[(c0, s0)], w)[0].0;
    let problem = ClusterProblem {
        freqs: fw,
        x: xw,
        y: yw,
        anchors: vec![(c0, s0)],
        amp_scale: a0.norm().max(f64::MIN_POSITIVE),
        xtol: opts.xtol,
    };
    let lm = LmOptions {
        max_iterations: 50,
        ftol: 1e-10,
        xtol: 1e-4,
    };
    let out = lsq::minimize(&problem, &[0.0, 0.0, a0.re, a0.im], &lm);
    let (c, s, ax, ay) = problem.unpack(&out.params, 0);
    (c.is_finite() && s.is_finite() && s > 0.0).then_some((c, s, Complex64::new(ax, ay)))
}

/// Joint fit of a cluster of nearby resonances.
///
/// Parameters per resonance: `[t, ln(sigma/s0), a_x, a_y]` with
/// `center = c0 + s0 t` relative to the starting guess `(c0, s0)`.
struct ClusterProblem<'a> {
    freqs: &'a [f64],
    x: &'a [f64],
    y: &'a [f64],
    anchors: Vec<(f64, f64)>,
    amp_scale: f64,
    xtol: f64,
}

impl ClusterProblem<'_> {
    fn unpack(&self, p: &[f64], k: usize) -> (f64, f64, f64, f64) {
        let (c0, s0) = self.anchors[k];
        let q = &p[4 * k..4 * k + 4];
        (c0 + s0 * q[0], s0 * q[1].exp(), q[2], q[3])
    }
}

impl LeastSquares for ClusterProblem<'_> {
    fn n_params(&self) -> usize {
        4 * self.anchors.len()
    }

    fn n_residuals(&self) -> usize {
        2 * self.freqs.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let m = self.freqs.len();
        out[..m].copy_from_slice(self.x);
        out[m..].copy_from_slice(self.y);
        for k in 0..self.anchors.len() {
            let (c, s, ax, ay) = self.unpack(p, k);
            for (i, &f) in self.freqs.iter().enumerate() {
                let g = derivative_gaussian(f, c, s);
                out[i] -= ax * g;
                out[m + i] -= ay * g;
            }
        }
    }

    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) {
        let m = self.freqs.len();
        for k in 0..self.anchors.len() {
            let (c, s, ax, ay) = self.unpack(p, k);
            let s0 = self.anchors[k].1;
            for (i, &f) in self.freqs.iter().enumerate() {
                let u = (f - c) / s;
                let e = (0.5 - 0.5 * u * u).exp();
                let g = -u * e;
                // dg/du
                let gp = -(1.0 - u * u) * e;
                // du/dt = -s0/s, du/d(ln s) = -u
                let dg_dt = gp * (-s0 / s);
                let dg_dls = gp * (-u);
                jac[(i, 4 * k)] = -ax * dg_dt;
                jac[(i, 4 * k + 1)] = -ax * dg_dls;
                jac[(i, 4 * k + 2)] = -g;
                jac[(i, 4 * k + 3)] = 0.0;
                jac[(m + i, 4 * k)] = -ay * dg_dt;
                jac[(m + i, 4 * k + 1)] = -ay * dg_dls;
                jac[(m + i, 4 * k + 2)] = 0.0;
                jac[(m + i, 4 * k + 3)] = -g;
            }
        }
    }

    fn step_floor(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for _ in &self.anchors {
            out.extend_from_slice(&[
                self.xtol,
                self.xtol,
                self.xtol * self.amp_scale,
                self.xtol * self.amp_scale,
            ]);
        }
        out
    }
}

/// Linear least-squares amplitudes for fixed centers and widths over a set
/// of samples. Returns amplitudes, per-quadrature std and residual RMS per
/// resonance window.
fn solve_amplitudes(
    freqs: &[f64],
    x: &[f64],
    y: &[f64],
    geometry: &[(f64, f64)],
    window_sigmas: f64,
) -> Vec<(Complex64, f64, f64)> {
    let m = freqs.len();
    let n = geometry.len();
    let g = DMatrix::from_fn(m, n, |i, k| {
        derivative_gaussian(freqs[i], geometry[k].0, geometry[k].1)
    });
    let gt = g.transpose();
    let a = &gt * &g;
    let inv = a.clone().try_inverse().unwrap_or_else(|| {
        a.pseudo_inverse(1e-14)
            .expect("pseudo-inverse of Gram matrix")
    });
    let xv = DVector::from_column_slice(x);
    let yv = DVector::from_column_slice(y);
    let ax = &inv * (&gt * &xv);
    let ay = &inv * (&gt * &yv);
    let rx = &xv - &g * &ax;
    let ry = &yv - &g * &ay;
    let dof = (2 * m).saturating_sub(2 * n).max(1) as f64;
    let s2 = (rx.norm_squared() + ry.norm_squared()) / dof;
    (0..n)
        .map(|k| {
            let (c, s) = geometry[k];
            let lo = freqs.partition_point(|&f| f < c - window_sigmas * s);
            let hi = freqs.partition_point(|&f| f <= c + window_sigmas * s);
            let cnt = (hi - lo).max(1) as f64;
            let ss: f64 = (lo..hi).map(|i| rx[i] * rx[i] + ry[i] * ry[i]).sum();
            (
                Complex64::new(ax[k], ay[k]),
                (s2 * inv[(k, k)].max(0.0)).sqrt(),
                (ss / (2.0 * cnt)).sqrt(),
            )
        })
        .collect()
}

/// Amplitude-only fit with centers and widths held at `geometry`
/// (typically the FM reference fits of the same resonances).
pub fn fit_amplitudes(
    spectrum: &QuadratureSpectrum,
    geometry: &[LineshapeFit],
    opts: &LineshapeOptions,
) -> Vec<LineshapeFit> {
    let geo: Vec<(f64, f64)> = geometry.iter().map(|f| (f.center, f.sigma)).collect();
    solve_amplitudes(
        spectrum.freqs(),
        spectrum.x_channel(),
        spectrum.y_channel(),
        &geo,
        opts.window_sigmas,
    )
    .into_iter()
    .zip(&geo)
    .map(
        |((amplitude, amplitude_std, residual_rms), &(center, sigma))| LineshapeFit {
            center,
            sigma,
            amplitude,
            amplitude_std,
            residual_rms,
            converged: true,
        },
    )
    .collect()
}

/// Fits `n_resonances` derivative-Gaussian lines to both quadratures.
///
/// Starting centers are peak-detected unless supplied; widths are estimated
/// from the matched filter at each start. Resonances whose fit windows
/// overlap are refined jointly. Results are sorted by center.
pub fn fit_lineshapes(
    spectrum: &QuadratureSpectrum,
    n_resonances: usize,
    initial_centers: Option<&[f64]>,
    opts: &LineshapeOptions,
) -> Result<Vec<LineshapeFit>> {
    opts.validate()?;
    if n_resonances == 0 {
        return Err(Error::invalid("n_resonances must be >= 1"));
    }
    let mut seeds: Vec<(f64, f64)> = match initial_centers {
        Some(c) => {
            if c.len() != n_resonances {
                return Err(Error::invalid(format!(
                    "{} initial centers for {n_resonances} resonances",
                    c.len()
                )));
            }
            let (lo, hi) = spectrum.span();
            if c.iter().any(|v| !v.is_finite() || *v < lo || *v > hi) {
                return Err(Error::invalid("initial center outside the spectrum span"));
            }
            c.iter()
                .map(|&f| (f, estimate_sigma(spectrum, f)))
                .collect()
        }
        None => detect_resonances(spectrum, n_resonances, opts)?,
    };
    seeds.sort_by(|a, b| a.0.total_cmp(&b.0));

    let freqs = spectrum.freqs();
    let w = opts.window_sigmas;
    let mut clusters: Vec<Vec<(f64, f64)>> = Vec::new();
    for seed in seeds {
        match clusters.last_mut() {
            Some(cl) if cl.iter().any(|&(c, s)| seed.0 - w * seed.1 <= c + w * s) => cl.push(seed),
            _ => clusters.push(vec![seed]),
        }
    }

    let lm = LmOptions {
        max_iterations: opts.max_iterations,
        ftol: 1e-14,
        xtol: opts.xtol,
    };
    let (span_lo, span_hi) = spectrum.span();
    let mut fits = Vec::with_capacity(n_resonances);
    let mut all_converged = true;
    let mut max_iter = 0;
    for cl in clusters {
        let lo_f = cl
            .iter()
            .map(|&(c, s)| c - w * s)
            .fold(f64::INFINITY, f64::min);
        let hi_f = cl
            .iter()
            .map(|&(c, s)| c + w * s)
            .fold(f64::NEG_INFINITY, f64::max);
        let lo = freqs.partition_point(|&f| f < lo_f);
        let hi = freqs.partition_point(|&f| f <= hi_f);
        if hi - lo < 4 * cl.len() + 2 {
            return Err(Error::invalid(format!(
                "fit window around {:.6e} Hz holds only {} samples",
                cl[0].0,
                hi - lo
            )));
        }
        let (fw, xw, yw) = (
            &freqs[lo..hi],
            &spectrum.x_channel()[lo..hi],
            &spectrum.y_channel()[lo..hi],
        );
        let start_amps = solve_amplitudes(fw, xw, yw, &cl, w);
        let amp_scale = start_amps
            .iter()
            .map(|a| a.0.norm())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let problem = ClusterProblem {
            freqs: fw,
            x: xw,
            y: yw,
            anchors: cl.clone(),
            amp_scale,
            xtol: opts.xtol,
        };
        let p0: Vec<f64> = start_amps
            .iter()
            .flat_map(|a| [0.0, 0.0, a.0.re, a.0.im])
            .collect();
        let out = lsq::minimize(&problem, &p0, &lm);
        max_iter = max_iter.max(out.iterations);
        let cov = out.covariance();
        let mut converged = out.converged;
        for k in 0..cl.len() {
            let (c, s, _, _) = problem.unpack(&out.params, k);
            if !(span_lo..=span_hi).contains(&c) || !s.is_finite() || s <= 0.0 {
                converged = false;
            }
        }
        let m = fw.len();
        for k in 0..cl.len() {
            let (c, s, ax, ay) = problem.unpack(&out.params, k);
            let amplitude_std = cov
                .as_ref()
                .map(|cv| {
                    (0.5 * (cv[(4 * k + 2, 4 * k + 2)] + cv[(4 * k + 3, 4 * k + 3)]))
                        .max(0.0)
                        .sqrt()
                })
                .unwrap_or(f64::NAN);
            let in_win: Vec<usize> = (0..m).filter(|&i| (fw[i] - c).abs() <= w * s).collect();
            let ss: f64 = in_win
                .iter()
                .map(|&i| out.residuals[i].powi(2) + out.residuals[m + i].powi(2))
                .sum();
            fits.push(LineshapeFit {
                center: c,
                sigma: s,
                amplitude: Complex64::new(ax, ay),
                amplitude_std,
                residual_rms: (ss / (2 * in_win.len().max(1)) as f64).sqrt(),
                converged,
            });
        }
        all_converged &= converged;
    }
    fits.sort_by(|a, b| a.center.total_cmp(&b.center));
    if !all_converged {
        return Err(Error::LineshapeNotConverged {
            iterations: max_iter,
            best: fits,
        });
    }
    Ok(fits)
}

/// Sum of all fitted lines evaluated on `freqs`, as `(x, y)` channels.
pub fn model_channels(freqs: &[f64], fits: &[LineshapeFit]) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; freqs.len()];
    let mut y = vec![0.0; freqs.len()];
    for fit in fits {
        for (i, &f) in freqs.iter().enumerate() {
            let z = fit.eval(f);
            x[i] += z.re;
            y[i] += z.im;
        }
    }
    (x, y)
}

/// Per-channel residual standard deviation of a set of fits.
pub fn residual_std(spectrum: &QuadratureSpectrum, fits: &[LineshapeFit]) -> (f64, f64) {
    let (mx, my) = model_channels(spectrum.freqs(), fits);
    let dof = spectrum.len().saturating_sub(2 * fits.len()).max(1) as f64;
    let ss = |data: &[f64], model: &[f64]| -> f64 {
        data.iter()
            .zip(model)
            .map(|(d, m)| (d - m) * (d - m))
            .sum::<f64>()
    };
    (
        (ss(spectrum.x_channel(), &mx) / dof).sqrt(),
        (ss(spectrum.y_channel(), &my) / dof).sqrt(),
    )
}

/// Pairs of fitted resonances closer than three widths.
pub fn overlap_warnings(fits: &[LineshapeFit]) -> Vec<Warning> {
    fits.windows(2)
        .filter_map(|w| {
            let sep = (w[1].center - w[0].center) / w[0].sigma.max(w[1].sigma);
            (sep < 3.0).then_some(Warning::OverlappingResonances {
                first_hz: w[0].center,
                second_hz: w[1].center,
                separation_sigmas: sep,
            })
        })
        .collect()
}

/// FM reference: known peak-to-peak deviation and the fits it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmCalibration {
    pub m_fm_hz: f64,
    pub fm_fits: Vec<LineshapeFit>,
}

impl FmCalibration {
    pub fn new(m_fm_hz: f64, fm_fits: Vec<LineshapeFit>) -> Result<Self> {
        if !(m_fm_hz.is_finite() && m_fm_hz > 0.0) {
            return Err(Error::invalid(format!(
                "m_fm must be positive, got {m_fm_hz}"
            )));
        }
        if fm_fits.len() != 8 {
            return Err(Error::invalid(format!(
                "FM calibration needs 8 fits, got {}",
                fm_fits.len()
            )));
        }
        Ok(Self { m_fm_hz, fm_fits })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationOptions {
    /// Divide out `arg A_FM` so modulations are referenced to the FM phase.
    pub phase_reference: bool,
}

/// `M_AC = A_AC / |A_FM| × M_FM` per resonance, placed into label slots by
/// `assignment` (sorted index → label). `ac_fits` and `cal.fm_fits` are both
/// in sorted-center order.
pub fn calibrate_modulations(
    ac_fits: &[LineshapeFit],
    cal: &FmCalibration,
    assignment: &Assignment,
    opts: &CalibrationOptions,
) -> Result<ModulationSet> {
    if ac_fits.len() != 8 || cal.fm_fits.len() != 8 {
        return Err(Error::invalid("calibration needs 8 AC and 8 FM fits"));
    }
    let mut mods = ModulationSet::zeros();
    let mut std = [0.0; 8];
    for (k, (ac, fm)) in ac_fits.iter().zip(&cal.fm_fits).enumerate() {
        let mag = fm.amplitude.norm();
        let fm_std = if fm.amplitude_std.is_finite() {
            fm.amplitude_std
        } else {
            0.0
        };
        if mag.is_nan() || mag <= 0.0 || mag < 10.0 * fm_std {
            return Err(Error::CalibrationUnreliable {
                index: k,
                magnitude: mag,
                std: fm_std,
            });
        }
        let mut m = ac.amplitude / mag * cal.m_fm_hz;
        if opts.phase_reference {
            m *= Complex64::from_polar(1.0, -fm.amplitude.arg());
        }
        let label = assignment.label(k);
        mods.set(label, m);
        let ac_std = if ac.amplitude_std.is_finite() {
            ac.amplitude_std
        } else {
            0.0
        };
        std[label.slot()] = ac_std / mag * cal.m_fm_hz;
    }
    mods.std_hz = Some(std);
    Ok(mods)
}

/// Flags resonances whose modulation depth exceeds `0.2 σ`, where the
/// linear FM calibration no longer holds. `fits` are in sorted-center order.
pub fn linearity_guard(
    mods: &ModulationSet,
    fits: &[LineshapeFit],
    assignment: &Assignment,
) -> Vec<Warning> {
    fits.iter()
        .enumerate()
        .filter_map(|(k, fit)| {
            let label = assignment.label(k);
            let ratio = mods.get(label).norm() / fit.sigma;
            (ratio > 0.2).then_some(Warning::NonlinearModulation { label, ratio })
        })
        .collect()
}
