use thiserror::Error;

use crate::base::LegType;

/// Every typed failure raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabError {
    #[error("matrix is not unimodular (det = {det})")]
    NotUnimodular { det: i64 },
    #[error("matrix is not hyperbolic (|trace| = {trace} <= 2)")]
    NotHyperbolic { trace: i64 },
    #[error("no su-path within leg bound {max_leg} (best {best})")]
    NoPathWithinBound { max_leg: f64, best: f64 },
    #[error("theta = {theta} must lie in (0, eps = {eps})")]
    InvalidTheta { theta: f64, eps: f64 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("operator is numerically singular (sigma_min / sigma_max = {ratio:e})")]
    SingularOperator { ratio: f64 },
    #[error("cocycle product is singular at step {step}")]
    SingularProduct { step: usize },
    #[error("{leg_type} holonomy diverged{} after {steps} steps (residual {residual:e})", at_leg(leg))]
    Diverged {
        leg_type: LegType,
        leg: Option<usize>,
        steps: usize,
        residual: f64,
    },
    #[error("{leg_type} holonomy did not converge{} within {steps} steps (residual {residual:e})", at_leg(leg))]
    NotConverged {
        leg_type: LegType,
        leg: Option<usize>,
        steps: usize,
        residual: f64,
    },
    #[error("cocycle is not fiber bunched (theta = {theta})")]
    NotBunched { theta: f64 },
    #[error("path is not a cycle (endpoint gap {gap:e})")]
    NotACycle { gap: f64 },
    #[error("premise violated at base point (residual {residual:e} >= {tol:e})")]
    PremiseViolated { residual: f64, tol: f64 },
    #[error("su-cycle weights are not trivial (defect {defect:e} >= {tol:e})")]
    CycleObstruction { defect: f64, tol: f64 },
    #[error("conjugacy is singular at ({x1}, {x2})")]
    SingularConjugacy { x1: f64, x2: f64 },
    #[error("no dominated splitting: projective iteration failed after {steps} steps")]
    NoDominatedSplitting { steps: usize },
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl LabError {
    /// Stable machine-readable name, used in reports.
    pub fn name(&self) -> &'static str {
        match self {
            LabError::NotUnimodular { .. } => "NotUnimodular",
            LabError::NotHyperbolic { .. } => "NotHyperbolic",
            LabError::NoPathWithinBound { .. } => "NoPathWithinBound",
            LabError::InvalidTheta { .. } => "InvalidTheta",
            LabError::DimensionMismatch { .. } => "DimensionMismatch",
            LabError::SingularOperator { .. } => "SingularOperator",
            LabError::SingularProduct { .. } => "SingularProduct",
            LabError::Diverged { .. } => "Diverged",
            LabError::NotConverged { .. } => "NotConverged",
            LabError::NotBunched { .. } => "NotBunched",
            LabError::NotACycle { .. } => "NotACycle",
            LabError::PremiseViolated { .. } => "PremiseViolated",
            LabError::CycleObstruction { .. } => "CycleObstruction",
            LabError::SingularConjugacy { .. } => "SingularConjugacy",
            LabError::NoDominatedSplitting { .. } => "NoDominatedSplitting",
            LabError::DegenerateSample(_) => "DegenerateSample",
            LabError::InvalidArgument(_) => "InvalidArgument",
        }
    }

    pub(crate) fn with_leg(self, index: usize) -> Self {
        match self {
            LabError::Diverged {
                leg_type,
                steps,
                residual,
                ..
            } => LabError::Diverged {
                leg_type,
                leg: Some(index),
                steps,
                residual,
            },
            LabError::NotConverged {
                leg_type,
                steps,
                residual,
                ..
            } => LabError::NotConverged {
                leg_type,
                leg: Some(index),
                steps,
                residual,
            },
            other => other,
        }
    }
}

fn at_leg(leg: &Option<usize>) -> String {
    leg.map(|i| format!(" at leg {i}")).unwrap_or_default()
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;
