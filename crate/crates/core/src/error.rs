use thiserror::Error;

/// Errors produced by the numerical core and the experiment runner.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// A Cholesky pivot was not strictly positive.
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    SingularMatrix { pivot: usize, value: f64 },

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    /// `g · F⁻¹g` is too small to define a finite step size.
    #[error("degenerate gradient: quadratic form {quadratic_form:e} is below {tolerance:e}")]
    DegenerateGradient { quadratic_form: f64, tolerance: f64 },

    /// A parameter update left the admissible region of its chart.
    #[error("chart violation: {0}")]
    ChartViolation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
