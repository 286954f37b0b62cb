use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Error, Serialize, PartialEq)]
#[serde(tag = "kind", content = "detail")]
pub enum HillError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("integrator step failure at x={x}: {reason}")]
    StepFailure { x: f64, reason: String },
    #[error("edge resolution error in gap {n}: {reason}")]
    EdgeResolution { n: usize, reason: String },
    #[error("branch tracking error at z=({re},{im})")]
    BranchTracking { re: f64, im: f64 },
    #[error("Dirichlet singularity at z=({re},{im})")]
    DirichletSingularity { re: f64, im: f64 },
    #[error("point z={0} is not inside a band")]
    BandOnly(f64),
    #[error("gap {0} could not be resolved")]
    GapUnresolved(usize),
    #[error("odd state count {count} in gap {n}")]
    ParityViolation { n: usize, count: usize },
    #[error("far gap {n} holds {count} states instead of two simple ones")]
    DichotomyViolation { n: usize, count: usize },
    #[error("bound state and its mirror are both zeros at ({re},{im})")]
    ExclusionViolation { re: f64, im: f64 },
    #[error("non-integer winding {winding} on box {bbox:?}")]
    WindingNonInteger { winding: f64, bbox: [f64; 4] },
    #[error("unpaired zero at ({re},{im})")]
    SymmetryViolation { re: f64, im: f64 },
    #[error("forbidden-domain audit failed at {0} points")]
    AuditFailure(usize),
    #[error("oracle did not converge: {0}")]
    ConvergenceFailure(String),
    #[error("gap {0} is closed")]
    ClosedGap(usize),
}

impl HillError {
    /// True for errors caused by bad input rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(self, HillError::Parse(_) | HillError::Validation(_))
    }
}

pub type Result<T> = std::result::Result<T, HillError>;
