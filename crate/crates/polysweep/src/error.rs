//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point is infeasible: constraint {index} violated by {violation:.3e}")]
    InfeasiblePoint { index: usize, violation: f64 },

    #[error("polyhedron is empty (phase-1 violation {violation:.3e})")]
    EmptyPolyhedron { violation: f64 },

    #[error("vector is not in the normal cone (best fit residual {residual:.3e})")]
    NotInNormalCone { residual: f64 },

    #[error("invalid polyhedron data: {0}")]
    BadPolyhedron(String),

    #[error("pair violates the normal-cone graph conditions: {0}")]
    NotInGraph(String),

    #[error("coderivative value is empty for this direction (domain violation)")]
    DomainViolation,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("catching-up step {step} failed: {detail}")]
    StepFailure { step: usize, detail: String },

    #[error("multiplier recovery failed at sample {index}: PLICQ violated or data infeasible")]
    PlicqViolation { index: usize },

    #[error("input data infeasible: {0}")]
    InfeasibleInput(String),

    #[error("meshes do not match and resampling is disabled")]
    MeshMismatch,

    #[error("problem is outside the reduced-solver family: {0}")]
    FamilyMismatch(String),

    #[error("initial quadruple is not feasible: {0}")]
    NoFeasibleStart(String),

    #[error("candidate fails the primal arc representation (residual {residual:.3e})")]
    PrimalInfeasible { residual: f64 },

    #[error("invalid problem data: {0}")]
    BadProblem(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
