use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("PoolingViolation: resource pooling identity off by {residual:e}")]
    PoolingViolation { residual: f64 },
    #[error("OverloadViolation: class 1 does not overload pool 1 (lambda1 = {lambda1}, mu11*nu1 = {capacity})")]
    OverloadViolation { lambda1: f64, capacity: f64 },
    #[error("NonpositiveRate: {0} must be positive")]
    NonpositiveRate(&'static str),
    #[error("NegativeRate: {name} = {value} at n = {n}")]
    NegativeRate { name: &'static str, value: f64, n: u64 },
    #[error("InvalidParameter: {0}")]
    InvalidParameter(String),
    #[error("PreconditionViolation: {0}")]
    PreconditionViolation(String),
    #[error("InfeasibleRectangle: z12 = {z12} at x = ({}, {})", x[0], x[1])]
    InfeasibleRectangle { x: [i64; 2], z12: i64 },
    #[error("NonIntegerSum: components sum to {0}")]
    NonIntegerSum(f64),
    #[error("DegenerateHorizon: horizon {horizon} must exceed burn-in {burn_in}")]
    DegenerateHorizon { horizon: f64, burn_in: f64 },
    #[error("InsufficientBatches: {got} batches, need at least {need}")]
    InsufficientBatches { got: usize, need: usize },
    #[error("ZeroTotalRate at x = ({}, {})", x[0], x[1])]
    ZeroTotalRate { x: [i64; 2] },
    #[error("InvalidAction at x = ({}, {})", x[0], x[1])]
    InvalidAction { x: [i64; 2] },
    #[error("InvalidGrid: {0}")]
    InvalidGrid(String),
    #[error("NonMonotone: negative off-diagonal weight at node ({i}, {j})")]
    NonMonotone { i: usize, j: usize },
    #[error("SingularEvaluation: {0}")]
    SingularEvaluation(String),
    #[error("SingularAdjoint: {0}")]
    SingularAdjoint(String),
    #[error("MaxIterations: no convergence after {0} iterations")]
    MaxIterations(usize),
    #[error("MaxOuterIterations: no convergence after {0} outer iterations")]
    MaxOuterIterations(usize),
    #[error("InfeasibleBudget: {0}")]
    InfeasibleBudget(String),
    #[error("BracketNotFound: F has no sign change on [{lo}, {hi}]")]
    BracketNotFound { lo: f64, hi: f64 },
    #[error("EmptyActionSet at x = ({}, {})", x[0], x[1])]
    EmptyActionSet { x: [i64; 2] },
    #[error("NonConvergentSpan: span {0:e} after iteration cap")]
    NonConvergentSpan(f64),
    #[error("BoxTooLarge: {0} states exceeds the limit")]
    BoxTooLarge(usize),
    #[error("BoxEmpty")]
    BoxEmpty,
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("Parse: {0}")]
    Parse(String),
}
