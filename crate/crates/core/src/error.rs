use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EotError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("target marginal b has a non-positive entry b[{index}] = {value}")]
    NonPositiveB { index: usize, value: f64 },

    #[error("{which} is not a probability vector (sum = {sum}, min = {min})")]
    NotSimplex { which: &'static str, sum: f64, min: f64 },

    #[error("all cost matrices are zero; every feasible plan is optimal")]
    ZeroCost,

    #[error("non-finite value encountered{}", match .iter { Some(t) => format!(" at iteration {t}"), None => String::new() })]
    NonFinite { iter: Option<usize> },

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("margin repair stalled with negative entry b^{agent}[{column}] = {value}")]
    StalledRepair { agent: usize, column: usize, value: f64 },

    #[error("plans violate the row-marginal precondition by {residual} in L1")]
    InfeasibleInput { residual: f64 },

    #[error("instance too large for {what}: {size} > {limit}")]
    SizeLimit { what: &'static str, size: usize, limit: usize },

    #[error("transportation simplex hit the pivot limit ({pivots})")]
    PivotLimit { pivots: usize },

    #[error("oracle instance outside grid caps: {0}")]
    TooLarge(String),
}

pub type Result<T, E = EotError> = std::result::Result<T, E>;
