use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("error bound undefined: n*u = {0} is not below 1")]
    BoundUndefined(f64),
    #[error("invalid spectral bounds: {0}")]
    InvalidBounds(String),
    #[error("Chebyshev coefficient denominator {0} is not positive")]
    Coefficient(f64),
    #[error("iteration count is not finite (got {0})")]
    CountOverflow(f64),
    #[error("normal-equations matrix is singular")]
    Singular,
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid scale factor {0}, must be positive")]
    InvalidScale(f64),
    #[error("invalid floating-point format: {0}")]
    Format(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension(format!(
            "{what}: expected length {expected}, got {got}"
        )));
    }
    Ok(())
}
