use std::fmt;

use thiserror::Error;

/// A single broken scenario invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// The horizon or episode count is zero.
    EmptyHorizon,
    EmptyEpisodes,
    ValueOutOfRange(f64),
    DeltaOutOfRange(f64),
    /// `beta` does not have one row per round, or a row has the wrong length.
    DimensionMismatch(String),
    /// `beta_h(l)` outside `[c_beta, C_beta]`, reported 1-based as `(h, l)`.
    BetaBound { round: usize, gap: usize, value: f64 },
    LambdaBound { round: usize, value: f64 },
    /// The bounds themselves are inconsistent (non-positive, crossed, `C_beta > 1`).
    Bounds(String),
    /// Worst-case expected conversions in `[h, h+1)` exceed `C_T`.
    IntervalMass { round: usize, mass: f64, cap: f64 },
    GridMissingZero,
    GridMissingOne,
    GridUnsorted,
    GridOutOfRange(f64),
    /// Unusable HOB distribution parameters for a round.
    InvalidHob { round: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyHorizon => write!(f, "horizon H must be at least 1"),
            Violation::EmptyEpisodes => write!(f, "episode count T must be at least 1"),
            Violation::ValueOutOfRange(v) => write!(f, "value per conversion {v} outside [0, 1]"),
            Violation::DeltaOutOfRange(d) => write!(f, "delta {d} outside (0, 0.5)"),
            Violation::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            Violation::BetaBound { round, gap, value } => {
                write!(f, "bound violation at ({round},{gap}): beta = {value}")
            }
            Violation::LambdaBound { round, value } => {
                write!(f, "bound violation at lambda_{round}: lambda = {value}")
            }
            Violation::Bounds(msg) => write!(f, "invalid bounds: {msg}"),
            Violation::IntervalMass { round, mass, cap } => write!(
                f,
                "expected conversions in [{round}, {}) can reach {mass:.6}, above C_T = {cap}",
                round + 1
            ),
            Violation::GridMissingZero => write!(f, "grid must contain 0"),
            Violation::GridMissingOne => write!(f, "grid must contain 1"),
            Violation::GridUnsorted => write!(f, "grid must be strictly increasing"),
            Violation::GridOutOfRange(b) => write!(f, "grid bid {b} outside [0, 1]"),
            Violation::InvalidHob { round } => write!(f, "invalid HOB distribution for round {round}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {}", join(.0))]
    InvalidScenario(Vec<Violation>),
    #[error("inconsistent win record: {0}")]
    InconsistentWins(String),
    #[error("empirical HOB model has no samples for round {0}")]
    NoSamples(usize),
    #[error("cannot sample from an empirical HOB model")]
    NotParametric,
    #[error("bid {bid} at (h={round}, l={gap}) is not on the bid grid")]
    OffGrid { round: usize, gap: usize, bid: f64 },
    #[error("policy has no entry for reachable state (h={round}, l={gap})")]
    UndefinedPolicy { round: usize, gap: usize },
    #[error("no matched pairs at {0}")]
    NoPairs(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
