use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes shared by every module of the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid resolution: {0}")]
    InvalidResolution(String),
    #[error("matrix is not symmetric positive-definite: {0}")]
    NonSpdInput(String),
    #[error("coefficient is not symmetric positive-definite at ({x}, {y})")]
    NonSpdCoefficient { x: f64, y: f64 },
    #[error("conjugate gradients did not converge: {iterations} iterations, relative residual {residual:e}")]
    SolverDivergence { iterations: usize, residual: f64 },
    #[error("coincident points: |x - y| = {0:e}")]
    CoincidentPoints(f64),
    #[error("node {0} lies on the boundary and cannot carry a point source")]
    BoundarySource(usize),
    #[error("points too close for the regular part: |x - y| = {distance:e} < {min:e}")]
    TooClose { distance: f64, min: f64 },
    #[error("infeasible mass: d*eps^2 = {required:e} exceeds the available area {available:e}")]
    InfeasibleMass { required: f64, available: f64 },
    #[error("vorticity field has empty support")]
    EmptySupport,
    #[error("time step {dt:e} exceeds the CFL bound {bound:e}")]
    CflViolation { dt: f64, bound: f64 },
    #[error("perturbation infeasible: {0}")]
    PerturbationInfeasible(String),
    #[error("field length {got} does not match the mesh ({expected})")]
    FieldMismatch { expected: usize, got: usize },
    #[error("non-finite value in field at index {0}")]
    NonFinite(usize),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::InvalidResolution(_) => "InvalidResolution",
            Error::NonSpdInput(_) => "NonSPDInput",
            Error::NonSpdCoefficient { .. } => "NonSPDCoefficient",
            Error::SolverDivergence { .. } => "SolverDivergence",
            Error::CoincidentPoints(_) => "CoincidentPoints",
            Error::BoundarySource(_) => "BoundarySource",
            Error::TooClose { .. } => "TooClose",
            Error::InfeasibleMass { .. } => "InfeasibleMass",
            Error::EmptySupport => "EmptySupport",
            Error::CflViolation { .. } => "CFLViolation",
            Error::PerturbationInfeasible(_) => "PerturbationInfeasible",
            Error::FieldMismatch { .. } => "FieldMismatch",
            Error::NonFinite(_) => "NonFinite",
        }
    }
}
