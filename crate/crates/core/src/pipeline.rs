//! End-to-end analysis: FM reference → resonance geometry, bias field and
//! calibration; AC spectrum → modulations → complex field → ellipse.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::RealFieldVector;
use crate::geometry::OrientationSet;
use crate::lineshape::{
    calibrate_modulations, fit_amplitudes, fit_lineshapes, linearity_guard, overlap_warnings,
    CalibrationOptions, FmCalibration, LineshapeFit, LineshapeOptions, QuadratureSpectrum,
};
use crate::polarization::{ellipse_from_phasor, PolarizationEllipse, MIN_ELLIPSE_POINTS};
use crate::reconstruct::{
    apply_ac_sign_convention, fit_ac_field, fit_dc_field, AcFitOptions, AcFitResult, DcFitOptions,
    DcFitResult,
};
use crate::spin::{ModulationSet, SpinParams};
use crate::warning::Warning;

/// Which of the two `(B_dc, B_ac) ↔ (-B_dc, -B_ac)` images is reported.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignConvention {
    /// The bias field in its canonical (or guess-aligned) orientation.
    #[default]
    Dc,
    /// Real part of `B_ac` non-negative along its largest component.
    Ac,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSettings {
    pub n_replicas: usize,
    pub seed: u64,
    /// Multiplies the residual-derived noise level (0 disables noise).
    pub noise_scale: f64,
    /// Largest tolerated fraction of failed replicas.
    pub max_failure_fraction: f64,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self {
            n_replicas: 1000,
            seed: 0,
            noise_scale: 1.0,
            max_failure_fraction: 0.1,
        }
    }
}

pub const MIN_REPLICAS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub params: SpinParams,
    #[serde(default)]
    pub orientations: OrientationSet,
    /// Peak-to-peak FM deviation of the reference spectrum, Hz.
    pub m_fm_hz: f64,
    #[serde(default = "default_resonances")]
    pub n_resonances: usize,
    #[serde(default)]
    pub lineshape: LineshapeOptions,
    #[serde(default)]
    pub dc_fit: DcFitOptions,
    #[serde(default)]
    pub ac_fit: AcFitOptions,
    /// Lines of different orientations closer than this many FM widths
    /// make the assignment ambiguous.
    #[serde(default = "default_resolution")]
    pub resolution_sigmas: f64,
    #[serde(default)]
    pub phase_reference: bool,
    /// Refit centers on every AC spectrum and refit the bias field from them.
    #[serde(default)]
    pub refit_dc_per_spectrum: bool,
    /// Take centers and widths of AC lines from the FM fits (amplitudes only).
    #[serde(default = "default_true")]
    pub ac_shape_from_fm: bool,
    #[serde(default)]
    pub sign_convention: SignConvention,
    #[serde(default = "default_ellipse_points")]
    pub ellipse_points: usize,
    #[serde(default)]
    pub bootstrap: BootstrapSettings,
}

fn default_resonances() -> usize {
    8
}

fn default_resolution() -> f64 {
    2.0
}

fn default_true() -> bool {
    true
}

fn default_ellipse_points() -> usize {
    360
}

impl PipelineConfig {
    pub fn new(m_fm_hz: f64) -> Self {
        Self {
            params: SpinParams::default(),
            orientations: OrientationSet::default(),
            m_fm_hz,
            n_resonances: 8,
            lineshape: LineshapeOptions::default(),
            dc_fit: DcFitOptions::default(),
            ac_fit: AcFitOptions::default(),
            resolution_sigmas: default_resolution(),
            phase_reference: false,
            refit_dc_per_spectrum: false,
            ac_shape_from_fm: true,
            sign_convention: SignConvention::Dc,
            ellipse_points: default_ellipse_points(),
            bootstrap: BootstrapSettings::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.lineshape.validate()?;
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.m_fm_hz) {
            return Err(Error::invalid("m_fm_hz must be positive"));
        }
        if self.n_resonances != 8 {
            return Err(Error::invalid(format!(
                "a four-orientation ensemble has 8 resonances, n_resonances = {}",
                self.n_resonances
            )));
        }
        if !pos(self.resolution_sigmas) || !pos(self.dc_fit.resolution_hz) {
            return Err(Error::invalid("resolution must be positive"));
        }
        if self.dc_fit.max_iterations == 0 || self.dc_fit.refine_candidates == 0 {
            return Err(Error::invalid(
                "dc_fit iteration and candidate counts must be >= 1",
            ));
        }
        let a = &self.ac_fit;
        if a.max_iterations == 0
            || !pos(a.ftol)
            || !(a.step_tol_t.is_finite() && a.step_tol_t >= 0.0)
            || !pos(a.jacobian_step_t)
        {
            return Err(Error::invalid("invalid ac_fit tolerances"));
        }
        if self.ellipse_points < MIN_ELLIPSE_POINTS {
            return Err(Error::invalid(format!(
                "ellipse_points must be >= {MIN_ELLIPSE_POINTS}"
            )));
        }
        let b = &self.bootstrap;
        if b.n_replicas < MIN_REPLICAS {
            return Err(Error::invalid(format!(
                "bootstrap.n_replicas must be >= {MIN_REPLICAS}"
            )));
        }
        if !(b.noise_scale.is_finite() && b.noise_scale >= 0.0)
            || !(0.0..=1.0).contains(&b.max_failure_fraction)
        {
            return Err(Error::invalid("invalid bootstrap settings"));
        }
        Ok(())
    }
}

/// Everything derived from the FM reference spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmStage {
    pub fits: Vec<LineshapeFit>,
    pub dc: DcFitResult,
    pub calibration: FmCalibration,
    pub warnings: Vec<Warning>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub dc: DcFitResult,
    pub fm_fits: Vec<LineshapeFit>,
    pub ac_fits: Vec<LineshapeFit>,
    pub modulations: ModulationSet,
    pub ac: AcFitResult,
    /// Absent when the reconstructed field is exactly zero.
    pub ellipse: Option<PolarizationEllipse>,
    pub warnings: Vec<Warning>,
}

/// Starting points that skip detection and pin the symmetry image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Seeds {
    pub fm_centers: Option<Vec<f64>>,
    pub b_dc: Option<RealFieldVector>,
}

fn dc_options(config: &PipelineConfig, fits: &[LineshapeFit]) -> DcFitOptions {
    let mean_sigma = fits.iter().map(|f| f.sigma).sum::<f64>() / fits.len() as f64;
    DcFitOptions {
        resolution_hz: config.resolution_sigmas * mean_sigma,
        ..config.dc_fit
    }
}

pub fn fm_stage(
    config: &PipelineConfig,
    fm: &QuadratureSpectrum,
    seeds: &Seeds,
) -> Result<FmStage> {
    let fits = fit_lineshapes(
        fm,
        config.n_resonances,
        seeds.fm_centers.as_deref(),
        &config.lineshape,
    )
    .map_err(|e| e.in_stage("fm-lineshape"))?;
    let centers: Vec<f64> = fits.iter().map(|f| f.center).collect();
    let dc = fit_dc_field(
        &centers,
        &config.params,
        &config.orientations,
        seeds.b_dc.as_ref(),
        &dc_options(config, &fits),
    )
    .map_err(|e| e.in_stage("dc-fit"))?;
    let warnings = overlap_warnings(&fits);
    let calibration =
        FmCalibration::new(config.m_fm_hz, fits.clone()).map_err(|e| e.in_stage("calibration"))?;
    Ok(FmStage {
        fits,
        dc,
        calibration,
        warnings,
    })
}

/// Analysis of one AC spectrum against a prepared FM stage.
pub fn analyze_ac(
    config: &PipelineConfig,
    stage: &FmStage,
    ac: &QuadratureSpectrum,
) -> Result<FitResult> {
    let fm_centers: Vec<f64> = stage.fits.iter().map(|f| f.center).collect();
    let mut dc = stage.dc.clone();
    let ac_fits = if config.refit_dc_per_spectrum {
        let fits = fit_lineshapes(
            ac,
            config.n_resonances,
            Some(&fm_centers),
            &config.lineshape,
        )
        .map_err(|e| e.in_stage("ac-lineshape"))?;
        let centers: Vec<f64> = fits.iter().map(|f| f.center).collect();
        dc = fit_dc_field(
            &centers,
            &config.params,
            &config.orientations,
            Some(&stage.dc.b_dc),
            &dc_options(config, &stage.fits),
        )
        .map_err(|e| e.in_stage("dc-fit"))?;
        fits
    } else if config.ac_shape_from_fm {
        fit_amplitudes(ac, &stage.fits, &config.lineshape)
    } else {
        fit_lineshapes(
            ac,
            config.n_resonances,
            Some(&fm_centers),
            &config.lineshape,
        )
        .map_err(|e| e.in_stage("ac-lineshape"))?
    };

    let cal_opts = CalibrationOptions {
        phase_reference: config.phase_reference,
    };
    let modulations =
        calibrate_modulations(&ac_fits, &stage.calibration, &dc.assignment, &cal_opts)
            .map_err(|e| e.in_stage("calibration"))?;
    let mut warnings = stage.warnings.clone();
    warnings.extend(linearity_guard(&modulations, &stage.fits, &dc.assignment));
    let max_snr = ac_fits
        .iter()
        .map(|f| {
            if f.amplitude_std > 0.0 {
                f.amplitude.norm() / f.amplitude_std
            } else if f.amplitude.norm() > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    if max_snr < 3.0 {
        warnings.push(Warning::LowSnr { max_snr });
    }

    let mut fit = fit_ac_field(
        &modulations,
        &dc.b_dc,
        &config.params,
        &config.orientations,
        None,
        &config.ac_fit,
    )
    .map_err(|e| e.in_stage("ac-fit"))?;
    if config.sign_convention == SignConvention::Ac {
        let (b_dc, b_ac) = apply_ac_sign_convention(&dc.b_dc, &fit.b_ac);
        dc.b_dc = b_dc;
        fit.b_ac = b_ac;
    }
    warnings.extend(fit.warnings.iter().cloned());
    let ellipse = match ellipse_from_phasor(&fit.b_ac, config.ellipse_points) {
        Ok(e) => Some(e),
        Err(Error::UndefinedEllipse(_)) => None,
        Err(e) => return Err(e.in_stage("ellipse")),
    };
    Ok(FitResult {
        dc,
        fm_fits: stage.fits.clone(),
        ac_fits,
        modulations,
        ac: fit,
        ellipse,
        warnings,
    })
}

pub fn analyze(
    config: &PipelineConfig,
    fm: &QuadratureSpectrum,
    ac: &QuadratureSpectrum,
    seeds: &Seeds,
) -> Result<FitResult> {
    let stage = fm_stage(config, fm, seeds)?;
    analyze_ac(config, &stage, ac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{ComplexFieldVector, Frame};
    use crate::synth::{generate_pair, SyntheticScenario};

    fn quiet() -> SyntheticScenario {
        SyntheticScenario {
            noise_std: 0.0,
            ..SyntheticScenario::default()
        }
    }

    #[test]
    fn noise_free_round_trip() {
        let s = quiet();
        let pair = generate_pair(&s).unwrap();
        let cfg = PipelineConfig::new(s.m_fm_hz);
        let r = analyze(&cfg, &pair.fm, &pair.ac, &Seeds::default()).unwrap();
        let got = r.ac.b_ac.to_array6();
        let want = s.b_ac.to_array6();
        let scale = s.b_ac.norm();
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-3 * scale, "{got:?} vs {want:?}");
        }
        assert!((r.dc.b_dc.to_vector() - s.b_dc.to_vector()).norm() < 1e-3 * s.b_dc.norm());
        assert!(r.ellipse.is_some());
    }

    #[test]
    fn zero_signal_ac_spectrum() {
        let s = SyntheticScenario::default().with_b_ac(ComplexFieldVector::zero(Frame::Crystal));
        let pair = generate_pair(&s).unwrap();
        let cfg = PipelineConfig::new(s.m_fm_hz);
        let r = analyze(&cfg, &pair.fm, &pair.ac, &Seeds::default()).unwrap();
        assert!(r.ac.b_ac.norm() < 0.02e-6, "{}", r.ac.b_ac.norm());
        assert!(r
            .warnings
            .iter()
            .any(|w| matches!(w, Warning::LowSnr { .. })));
    }

    #[test]
    fn refit_mode_matches_fixed_mode() {
        let s = quiet();
        let pair = generate_pair(&s).unwrap();
        let mut cfg = PipelineConfig::new(s.m_fm_hz);
        let a = analyze(&cfg, &pair.fm, &pair.ac, &Seeds::default()).unwrap();
        cfg.refit_dc_per_spectrum = true;
        let b = analyze(&cfg, &pair.fm, &pair.ac, &Seeds::default()).unwrap();
        assert!((a.ac.b_ac.to_array6()[0] - b.ac.b_ac.to_array6()[0]).abs() < 1e-3 * s.b_ac.norm());
        assert!((a.dc.b_dc.to_vector() - b.dc.b_dc.to_vector()).norm() < 1e-6 * s.b_dc.norm());
    }

    #[test]
    fn config_json() {
        let cfg = PipelineConfig::from_json(r#"{"m_fm_hz": 1e5}"#).unwrap();
        assert_eq!(cfg, PipelineConfig::new(1e5));
        assert!(PipelineConfig::from_json("{}").is_err());
        assert!(PipelineConfig::from_json(r#"{"m_fm_hz": 1e5, "n_resonances": 6}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"m_fm_hz": -1}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"m_fm_hz": 1e5, "typo": 1}"#).is_err());
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(PipelineConfig::from_json(&text).unwrap(), cfg);
    }
}
