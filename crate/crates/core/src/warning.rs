use serde::{Deserialize, Serialize};

use crate::spin::ResonanceLabel;

/// Non-fatal diagnostics attached to pipeline results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Warning {
    /// Modulation depth is not small against the linewidth; the FM
    /// calibration is only linear for `|M| << sigma`.
    NonlinearModulation { label: ResonanceLabel, ratio: f64 },
    /// AC fit cost well above what the modulation uncertainties explain.
    PoorFit { cost_hz2: f64, expected_hz2: f64 },
    /// No AC amplitude stands clear of its uncertainty.
    LowSnr { max_snr: f64 },
    /// Two resonances closer than three linewidths.
    OverlappingResonances {
        first_hz: f64,
        second_hz: f64,
        separation_sigmas: f64,
    },
}
