use std::fmt;

/// Pipeline stage that produced an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Input,
    Decomposition,
    Profile,
    Discrepancy,
    StoppingTime,
    Integration,
    Minimization,
    Problem,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Input => "input",
            Stage::Decomposition => "decomposition",
            Stage::Profile => "profile",
            Stage::Discrepancy => "discrepancy",
            Stage::StoppingTime => "stopping_time",
            Stage::Integration => "integration",
            Stage::Minimization => "minimization",
            Stage::Problem => "problem",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero operator cannot be normalized")]
    ZeroOperator,

    #[error("noise level exceeds data: C*delta = {c_delta:e} >= ||f_delta|| = {data_norm:e}")]
    NoiseExceedsData { c_delta: f64, data_norm: f64 },

    #[error(
        "data has null-space component not admissible for C*delta = {c_delta:e} \
         (null component norm {null_norm:e}); C = 1 needs f_delta orthogonal to N(A*) \
         and C > 1 needs C*delta above the null norm: project f_delta or increase C"
    )]
    NullSpaceComponent { null_norm: f64, c_delta: f64 },

    #[error("data lies entirely in N(A*); discrepancy equation is meaningless")]
    DegenerateProfile,

    #[error("stopping time negative; decrease c1 or start further back (epsilon* = {epsilon_star:e} > epsilon(0) = {epsilon_zero:e})")]
    NegativeStoppingTime {
        epsilon_star: f64,
        epsilon_zero: f64,
    },

    #[error("integration diverged at t = {t:e}")]
    Diverged { t: f64 },

    #[error("maximum number of steps ({max_steps}) exceeded at t = {t:e}")]
    MaxStepsExceeded {
        max_steps: usize,
        t: f64,
        partial: Box<crate::dsm::Trajectory>,
    },

    #[error("gap budget {budget:e} unreachable; best heuristic gap {gap:e}")]
    BudgetUnreachable {
        budget: f64,
        gap: f64,
        best: Box<crate::Vector>,
    },

    #[error("discrepancy equation has no root in scan range")]
    NoRootInScanRange { trace: Vec<(f64, f64)> },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{stage} stage failed: {source}")]
    Staged {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at(self, stage: Stage) -> Error {
        match self {
            e @ Error::Staged { .. } => e,
            e => Error::Staged {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// The stage tag, if the error was raised inside a pipeline.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Staged { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    /// The innermost error, with stage wrappers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Staged { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for violated preconditions (bad data/parameters), as opposed to
    /// numerical failures.
    pub fn is_precondition(&self) -> bool {
        matches!(
            self.root(),
            Error::DimensionMismatch { .. }
                | Error::InvalidArgument(_)
                | Error::ZeroOperator
                | Error::NoiseExceedsData { .. }
                | Error::NullSpaceComponent { .. }
                | Error::DegenerateProfile
                | Error::NegativeStoppingTime { .. }
                | Error::NonFinite(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}
