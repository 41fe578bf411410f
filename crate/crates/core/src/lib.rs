//! Phasor vector magnetometry with NV-center ensembles.
//!
//! Quadrature (lock-in X/Y) ODMR spectra of the four NV orientations are fit
//! with derivative-Gaussian lines, calibrated against a frequency-modulated
//! reference and inverted into the complex amplitude of each field
//! component. From the phasor follow polarization ellipses, a crossed-coil
//! coupling fit and bootstrap uncertainties.
//!
//! ```
//! use nvphasor::pipeline::{analyze, PipelineConfig, Seeds};
//! use nvphasor::synth::{generate_pair, SyntheticScenario};
//!
//! let scenario = SyntheticScenario { noise_std: 0.0, ..Default::default() };
//! let pair = generate_pair(&scenario).unwrap();
//! let config = PipelineConfig::new(scenario.m_fm_hz);
//! let result = analyze(&config, &pair.fm, &pair.ac, &Seeds::default()).unwrap();
//! let err = (result.ac.b_ac.to_array6()[0] - scenario.b_ac.to_array6()[0]).abs();
//! assert!(err < 1e-3 * scenario.b_ac.norm());
//! ```

pub mod bootstrap;
pub mod ensemble;
pub mod error;
pub mod field;
pub mod geometry;
pub mod io;
pub mod lineshape;
pub mod lsq;
pub mod noise;
pub mod pipeline;
pub mod polarization;
pub mod reconstruct;
pub mod report;
pub mod spin;
pub mod synth;
pub mod warning;

pub use error::{Error, Result};
pub use field::{ComplexFieldVector, Frame, RealFieldVector};
pub use geometry::{default_orientation_set, OrientationSet};
pub use spin::{Branch, ModulationSet, ResonanceLabel, SpinParams};
