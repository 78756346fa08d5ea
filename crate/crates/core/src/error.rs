use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("singular mixing parameterization: gamma is zero for dataset {k}, block {t}")]
    SingularGamma { k: usize, t: usize },

    #[error("inconsistent CSV parameters for dataset {k}, block {t}: |w^H a - 1| = {residual:e}")]
    InconsistentParams { k: usize, t: usize, residual: f64 },

    #[error("degenerate score normalization: |nu| = {0:e}")]
    DegenerateNormalization(f64),

    #[error("singular SOI covariance ({0}); use a regularization weight mu > 0")]
    SingularCovariance(String),

    #[error("circularity coefficient magnitude {0} is not below one")]
    ImproperCircularity(f64),

    #[error("degenerate direction: w^H C w = {0:e}")]
    DegenerateDirection(f64),

    #[error("singular Hessian for dataset {0}")]
    SingularHessian(usize),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
