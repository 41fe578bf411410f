use thiserror::Error;

use crate::lineshape::LineshapeFit;
use crate::reconstruct::{AcFitResult, DcFitResult};
use crate::spin::ResonanceLabel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("frame mismatch: expected {expected}, found {found}")]
    FrameMismatch { expected: String, found: String },

    #[error("orientation index {0} out of range (expected 1..=4)")]
    OrientationOutOfRange(usize),

    #[error("found {} candidate resonances, {wanted} requested (centers: {found:?})", found.len())]
    Detection { wanted: usize, found: Vec<f64> },

    #[error("lineshape fit did not converge after {iterations} iterations")]
    LineshapeNotConverged {
        iterations: usize,
        best: Vec<LineshapeFit>,
    },

    #[error("FM calibration unreliable for resonance {index}: |A_FM| = {magnitude:.3e} < 10 x std {std:.3e}")]
    CalibrationUnreliable {
        index: usize,
        magnitude: f64,
        std: f64,
    },

    #[error("ambiguous resonance assignment: colliding pairs {pairs:?}")]
    AmbiguousAssignment {
        pairs: Vec<(ResonanceLabel, ResonanceLabel)>,
    },

    #[error("DC field fit did not converge after {} iterations", best.iterations)]
    DcNotConverged { best: Box<DcFitResult> },

    #[error("AC field fit did not converge after {} iterations", best.iterations)]
    AcNotConverged { best: Box<AcFitResult> },

    #[error("ill-conditioned coupled-coil fit: coil directions {angle_deg:.2} deg apart")]
    IllConditioned { angle_deg: f64 },

    #[error("undefined ellipse: {0}")]
    UndefinedEllipse(String),

    #[error("unstable pipeline: {failed} of {total} bootstrap replicas failed ({first_failure})")]
    UnstablePipeline {
        failed: usize,
        total: usize,
        first_failure: String,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Pipeline stage the error was raised in, if known.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }

    /// The underlying error with any stage label removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    /// Stable machine-readable code for this error.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Stage { source, .. } => source.code(),
            Error::InvalidInput(_)
            | Error::FrameMismatch { .. }
            | Error::OrientationOutOfRange(_) => "invalid-input",
            Error::Detection { .. } => "detection-failed",
            Error::LineshapeNotConverged { .. }
            | Error::DcNotConverged { .. }
            | Error::AcNotConverged { .. } => "not-converged",
            Error::CalibrationUnreliable { .. } => "calibration-unreliable",
            Error::AmbiguousAssignment { .. } => "ambiguous-assignment",
            Error::IllConditioned { .. } => "ill-conditioned",
            Error::UndefinedEllipse(_) => "undefined-ellipse",
            Error::UnstablePipeline { .. } => "unstable-pipeline",
            Error::Parse { .. } | Error::Json(_) => "parse-error",
        }
    }
}
