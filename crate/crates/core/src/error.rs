use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidSpec(String),
    #[error("frequency ({xi1}, {xi2}) at lattice index ({n1}, {n2}) lies outside the admissible band")]
    OutOfBand { n1: i64, n2: i64, xi1: f64, xi2: f64 },
    #[error("frequency ({0}, {1}) is not on the lattice")]
    OffLattice(f64, f64),
    #[error("mismatched grids: {0}")]
    Mismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
