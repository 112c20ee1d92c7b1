use alloc::boxed::Box;
use alloc::string::String;

use thiserror::Error;

use crate::walk::PathFunctionals;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadratureError {
    #[error("quadrature did not reach tolerance (last estimate {estimate})")]
    NoConvergence { estimate: f64 },
    #[error("integrand produced a non-finite value")]
    NonFiniteIntegrand,
    #[error("integration bounds must be finite")]
    NonFiniteBounds,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid {family} parameters: {reason}")]
    InvalidParameter { family: &'static str, reason: String },
    #[error("E[xi] is not finite for the declared step law")]
    UndefinedMean,
    #[error("declared {side} tail descriptor {declared} is inconsistent with the marginal law")]
    InconsistentTail { side: &'static str, declared: String },
    #[error("mean drift must be positive for this operation (mu = {mu})")]
    NonPositiveDrift { mu: f64 },
    #[error("t must be a finite nonnegative number, got {0}")]
    InvalidLevel(f64),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("exact horizon needs an essential lower bound for eta")]
    ExactNeedsLowerBound,
    #[error("exact horizon needs nonnegative steps xi")]
    ExactNeedsNonnegativeSteps,
    #[error("miss probability must lie in (0, 1), got {0}")]
    MissProbability(f64),
    #[error("drift fraction must lie in (0, 1), got {0}")]
    DriftFraction(f64),
    #[error("fixed horizon must be at least one step")]
    EmptyHorizon,
    #[error("budgeted horizon needs a closed-form lower tail for eta; {0}")]
    NoAnalyticTailBound(&'static str),
    #[error("certifying N and rho needs E[eta^-] < infinity, otherwise N(t) is infinite")]
    EtaMinusNotIntegrable,
    #[error("certifying N and rho needs mu > 0, got {0}")]
    NonPositiveDrift(f64),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("level grid is empty")]
    Empty,
    #[error("level grid contains a non-finite value")]
    NonFinite,
    #[error("level grid must be strictly increasing (index {0})")]
    NotIncreasing(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    /// The fixed horizon ran out before the walk passed every level. The
    /// partial record holds everything observed up to the horizon; levels
    /// not yet passed carry `tau = 0`.
    #[error("horizon of {steps} steps exhausted before passing level index {first_unpassed}")]
    HorizonExhausted {
        steps: u64,
        first_unpassed: usize,
        partial: Box<PathFunctionals>,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LimitError {
    #[error("invalid limit-process parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("expected atom count {expected:.3e} exceeds the limit of 1e8; raise the truncation")]
    TooManyAtoms { expected: f64 },
    #[error("window [0, {window}] ended before the record process crossed level {level}")]
    WindowTooShort { window: f64, level: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("non-finite value in replication {replication}, column {column}")]
    NonFinite { replication: usize, column: usize },
    #[error("level grid must span at least two decades (t_max / t_min = {ratio})")]
    GridTooShort { ratio: f64 },
    #[error("dimension mismatch: expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}
