use thiserror::Error;

/// Errors raised by simulation, density evaluation and the samplers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dominating rate {dominating} is below the exit rate {exit} at state {state}")]
    PolicyViolation {
        state: String,
        exit: f64,
        dominating: f64,
    },
    #[error("jump cap of {cap} exceeded; rates may be explosive or mis-specified")]
    JumpCapExceeded { cap: usize },
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid evidence: {0}")]
    InvalidEvidence(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("ergodicity precondition violated: {0}")]
    Ergodicity(String),
    #[error("unsupported model: {0}")]
    UnsupportedModel(String),
    #[error("simultaneous jumps at t = {time}")]
    SimultaneousJump { time: f64 },
    #[error("observation time {time} lies outside [0, {t_max}]")]
    ObservationOutOfRange { time: f64, t_max: f64 },
    #[error("all particle weights vanished at step {step}")]
    WeightCollapse { step: usize },
    #[error("potentials are -inf for every state at step {step}")]
    DegeneratePotential { step: usize },
    #[error("reference skeleton is invalid: {0}")]
    InvalidReference(String),
    #[error("enumeration of {size} skeletons exceeds the limit of {limit}")]
    EnumerationTooLarge { size: f64, limit: usize },
    #[error("parent configuration {code} of node {node} has no intensity matrix")]
    UnknownParentConfig { node: usize, code: usize },
    #[error("time step {h} makes the discretized chain invalid: {reason}")]
    UnstableStep { h: f64, reason: String },
    #[error("statistic is undefined: {0}")]
    Statistic(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::PolicyViolation { .. } => "policy_violation",
            Error::JumpCapExceeded { .. } => "jump_cap_exceeded",
            Error::InvalidTrajectory(_) => "invalid_trajectory",
            Error::InvalidModel(_) => "invalid_model",
            Error::InvalidEvidence(_) => "invalid_evidence",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Ergodicity(_) => "ergodicity",
            Error::UnsupportedModel(_) => "unsupported_model",
            Error::SimultaneousJump { .. } => "simultaneous_jump",
            Error::ObservationOutOfRange { .. } => "observation_out_of_range",
            Error::WeightCollapse { .. } => "weight_collapse",
            Error::DegeneratePotential { .. } => "degenerate_potential",
            Error::InvalidReference(_) => "invalid_reference",
            Error::EnumerationTooLarge { .. } => "enumeration_too_large",
            Error::UnknownParentConfig { .. } => "unknown_parent_config",
            Error::UnstableStep { .. } => "unstable_step",
            Error::Statistic(_) => "statistic",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    /// Process exit code: 2 for bad input or configuration, 3 for failures
    /// while sampling, 4 for oracle and statistic failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidModel(_)
            | Error::InvalidEvidence(_)
            | Error::InvalidConfig(_)
            | Error::Ergodicity(_)
            | Error::UnsupportedModel(_)
            | Error::PolicyViolation { .. }
            | Error::ObservationOutOfRange { .. }
            | Error::UnknownParentConfig { .. }
            | Error::InvalidTrajectory(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => 2,
            Error::JumpCapExceeded { .. }
            | Error::SimultaneousJump { .. }
            | Error::WeightCollapse { .. }
            | Error::DegeneratePotential { .. }
            | Error::InvalidReference(_) => 3,
            Error::EnumerationTooLarge { .. } | Error::UnstableStep { .. } | Error::Statistic(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
