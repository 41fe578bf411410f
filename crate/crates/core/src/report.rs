//! Result documents written by the command-line tool.

use serde::{Deserialize, Serialize};

use crate::bootstrap::BootstrapReport;
use crate::error::Result;
use crate::pipeline::FitResult;
use crate::polarization::CoupledCoilFit;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub tool_version: String,
    /// SHA-256 of the configuration (or scenario) file bytes.
    pub config_sha256: String,
    pub inputs: Vec<InputDigest>,
}

/// One analyzed AC spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub provenance: Provenance,
    pub fm_input: String,
    pub ac_input: String,
    pub result: FitResult,
}

impl FitReport {
    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        r.result.ac.b_ac.ensure_finite()?;
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapDocument {
    pub provenance: Provenance,
    pub fm_input: String,
    pub ac_input: String,
    pub report: BootstrapReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoilDocument {
    pub provenance: Provenance,
    pub fit: CoupledCoilFit,
    /// Eccentricities of the measured `a`, `b` and `ab` fields.
    pub eccentricities: [f64; 3],
}
