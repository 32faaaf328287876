use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabError {
    #[error("insufficient prefix: need {needed} partial quotients, have {available}")]
    InsufficientPrefix { needed: usize, available: usize },
    #[error("degenerate angle: alpha must be a nonzero rational in (0,1)")]
    DegenerateAngle,
    #[error("class violation: {0}")]
    ClassViolation(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("tower degenerate at level {m}: {reason}")]
    TowerDegenerate { m: usize, reason: String },
    #[error("regions undefined for m = {0} (need m > 1)")]
    RegionUndefined(usize),
    #[error("singular point at x = {0}")]
    SingularPoint(String),
    #[error("orbit hits a singularity at index {index} (x = {x})")]
    SingularOrbit { index: u64, x: String },
    #[error("function is not of bounded variation: {0}")]
    NotBoundedVariation(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("stage infeasible: {0}")]
    StageInfeasible(String),
    #[error("witness not found: {0}")]
    WitnessNotFound(String),
    #[error("construction violated at step {index}: {reason}")]
    ConstructionViolated { index: u64, reason: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("undecided at {bits} bits: {what}")]
    Undecided { bits: u32, what: String },
}

pub type Result<T> = std::result::Result<T, LabError>;
