use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AtwError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("zero vector has no subgradient selection")]
    ZeroInput,
    #[error("invalid anisotropy: {0}")]
    InvalidAnisotropy(String),
    #[error("projection did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("set touches the two-layer frame")]
    FrameViolation,
    #[error("distance of an empty or full set is undefined")]
    DegenerateSet,
    #[error("field domains differ")]
    DomainMismatch,
    #[error("solver not certified: relative gap {gap:.3e} after {iterations} iterations")]
    NotCertified { gap: f64, iterations: usize },
    #[error("trace has not reached extinction")]
    NotExtinct,
    #[error("coarea mismatch: grid {grid:.12e} vs level sum {levels:.12e}")]
    CoareaMismatch { grid: f64, levels: f64 },
    #[error("disks overlap")]
    Overlap,
    #[error("{0}")]
    Invalid(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for AtwError {
    fn from(e: std::io::Error) -> Self {
        AtwError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, AtwError>;
