use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("intensity matrix is not square ({rows} rows, row {row} has {cols} entries)")]
    NotSquare { rows: usize, row: usize, cols: usize },

    #[error("intensity matrix must have at least one state")]
    EmptyChain,

    #[error("negative off-diagonal rate q[{row}][{col}] = {value}")]
    NegativeRate { row: usize, col: usize, value: f64 },

    #[error("row {row} of the intensity matrix sums to {sum}, expected 0")]
    RowSumNonZero { row: usize, sum: f64 },

    #[error("state index {index} out of range for a {n_states}-state chain")]
    InvalidState { index: usize, n_states: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Feller condition 2*kappa*theta >= chi^2 violated in state(s) {states:?}")]
    FellerViolated { states: Vec<usize> },

    #[error("solvability assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("outside the domain of the closed-form solution: {0}")]
    DomainViolation(String),

    #[error("Riccati solution blew up at t = {t} (|B| = {value})")]
    BlowUp { t: f64, value: f64 },

    #[error("ODE step failure: {0}")]
    StepFailure(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}
