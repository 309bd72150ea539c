use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("pattern has {got} characters, expected {expected}")]
    PatternLength { got: usize, expected: usize },
    #[error("illegal character {ch:?} at position {pos} (local dimension {dim})")]
    PatternChar { ch: char, pos: usize, dim: usize },
    #[error("Hilbert dimension {dim} exceeds the cap {cap}")]
    DimensionCap { dim: u128, cap: usize },
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("invalid sector: {0}")]
    InvalidSector(String),
    #[error("operator error: {0}")]
    Operator(String),
    #[error("dense oracle limited to dimension {limit}, got {dim}")]
    DenseTooLarge { dim: usize, limit: usize },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("evolution error: {0}")]
    Evolution(String),
    #[error("state left the basis at full index {0}")]
    OutsideBasis(u64),
    #[error("qmm error: {0}")]
    Qmm(String),
    #[error("analysis error: {0}")]
    Analysis(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
