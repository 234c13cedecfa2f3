use thiserror::Error;

/// Errors raised anywhere in the analysis pipeline.
///
/// Variants fall into two families: input validation (bad model, session,
/// scenario or configuration) and numeric failure (the math could not be
/// carried out reliably). [`Error::is_validation`] tells them apart.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("RowSumViolation: row {row} of Q sums to {sum} (must be 0)")]
    RowSumViolation { row: usize, sum: f64 },
    #[error("NegativeOffDiagonal: Q[{row}][{col}] = {value} is negative")]
    NegativeOffDiagonal { row: usize, col: usize, value: f64 },
    #[error("PositiveDiagonal: Q[{row}][{row}] = {value} is positive")]
    PositiveDiagonal { row: usize, value: f64 },
    #[error("NegativeArrivalRate: lambda[{state}] = {value} is negative")]
    NegativeArrivalRate { state: usize, value: f64 },
    #[error("NonPositivePlayoutRate: mu = {0} must be > 0")]
    NonPositivePlayoutRate(f64),
    #[error("NonFinite: {0} contains a non-finite value")]
    NonFinite(&'static str),
    #[error("Reducible: state {unreachable} is not mutually reachable from state 0")]
    Reducible { unreachable: usize },
    #[error("DimensionMismatch: {0}")]
    DimensionMismatch(String),
    #[error("InvalidSession: {0}")]
    InvalidSession(String),
    #[error("InvalidInversionParams: {0}")]
    InvalidInversionParams(String),
    #[error("InvalidScenario: {0}")]
    InvalidScenario(String),
    #[error("InvalidWeights: {0}")]
    InvalidWeights(String),
    #[error("InvalidGrid: {0}")]
    InvalidGrid(String),
    #[error("Config: {0}")]
    Config(String),
    #[error("DomainError: {0}")]
    DomainError(String),
    #[error("ZeroArrivalState: no state has a positive arrival rate, the prefetch threshold is never reached")]
    ZeroArrivalState,
    #[error("InfeasiblePlayout: every arrival rate is zero")]
    InfeasiblePlayout,

    #[error("SingularSystem: {0}")]
    SingularSystem(String),
    #[error("DegenerateRank: det(Q + sR - wI) vanishes identically at w = {0}")]
    DegenerateRank(String),
    #[error("NonConvergence: {0}")]
    NonConvergence(String),
    #[error("DefectivePencil: roots {0} and {1} coincide with parallel eigenvectors")]
    DefectivePencil(usize, usize),
    #[error("RootCountMismatch: {roots} roots with negative real part but {rows} boundary conditions")]
    RootCountMismatch { roots: usize, rows: usize },
    #[error("OverflowRisk: exp(A/2l) = {scale:e} leaves no significant digits in 64-bit arithmetic (A = {a})")]
    OverflowRisk { a: f64, scale: f64 },
    #[error("OutOfRange: inverted CDF value {value} at t = {t} lies outside [-1e-3, 1 + 1e-3]")]
    OutOfRange { value: f64, t: f64 },
    #[error("Unstable: mean drift {0} >= 0, the restricted expectation may diverge")]
    Unstable(f64),
    #[error("GridTooCoarse: {0}")]
    GridTooCoarse(String),
    #[error("TailTooLarge: residual mass {tail} beyond j = {jmax} exceeds 0.05")]
    TailTooLarge { tail: f64, jmax: usize },
}

impl Error {
    /// True for errors caused by invalid input rather than by numerics.
    pub fn is_validation(&self) -> bool {
        use Error::*;
        matches!(
            self,
            RowSumViolation { .. }
                | NegativeOffDiagonal { .. }
                | PositiveDiagonal { .. }
                | NegativeArrivalRate { .. }
                | NonPositivePlayoutRate(_)
                | NonFinite(_)
                | Reducible { .. }
                | DimensionMismatch(_)
                | InvalidSession(_)
                | InvalidInversionParams(_)
                | InvalidScenario(_)
                | InvalidWeights(_)
                | InvalidGrid(_)
                | Config(_)
                | DomainError(_)
                | ZeroArrivalState
                | InfeasiblePlayout
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
