use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BmError {
    #[error("dyadic scale {j} outside the exactly representable range |j| <= {max}")]
    ScaleOverflow { j: i64, max: i32 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not Hermitian (relative residual {residual:e})")]
    NonHermitian { residual: f64 },

    #[error("matrix is not positive definite (smallest eigenvalue {min_eig:e}, largest {max_eig:e})")]
    NotPositiveDefinite { min_eig: f64, max_eig: f64 },

    #[error("{what} did not converge after {iterations} iterations")]
    NotConverged { what: &'static str, iterations: usize },

    #[error("weight evaluated at a declared singular point {point:?}")]
    SingularPoint { point: Vec<f64> },

    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),

    #[error("window enumerates {count} cubes at one scale, cap is {cap}")]
    WindowTooLarge { count: u128, cap: u128 },

    #[error("point {point:?} lies outside the cached averaging window")]
    OutsideWindow { point: Vec<f64> },

    #[error("weight is degenerate on the cube: {0}")]
    Degenerate(String),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("ellipticity sandwich violated: {lhs:e} <= {mid:e} <= {rhs:e} fails")]
    EllipticityViolated { lhs: f64, mid: f64, rhs: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

impl BmError {
    /// Configuration problems (bad parameters, oversized windows) as opposed to
    /// failures of a numerical routine on valid input.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            BmError::ScaleOverflow { .. }
                | BmError::InvalidInput(_)
                | BmError::ParameterOutOfRange(_)
                | BmError::WindowTooLarge { .. }
                | BmError::Hypothesis(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, BmError>;
