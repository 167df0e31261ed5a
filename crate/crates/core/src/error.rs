use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("charge length mismatch: {left} vs {right}")]
    ChargeLength { left: usize, right: usize },
    #[error("charge arithmetic overflowed i64")]
    ChargeOverflow,
    #[error("invalid index: {0}")]
    InvalidIndex(String),
    #[error("index {index} out of range (length {len})")]
    OutOfRange { index: usize, len: usize },
    #[error("sector mismatch: {0}")]
    SectorMismatch(String),
    #[error("direction mismatch on contracted legs {0} and {1}")]
    DirectionMismatch(usize, usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("flux mismatch: {0}")]
    FluxMismatch(String),
    #[error("tensor has no blocks")]
    EmptyTensor,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("bitstring length {got} does not match {expected} sites")]
    BitstringLength { expected: usize, got: usize },
    #[error("bitstring {bits} violates constraint row {row}: lhs {lhs} != rhs {rhs}")]
    InvalidSeed { bits: String, row: usize, lhs: i64, rhs: i64 },
    #[error("seed set is empty")]
    EmptySeeds,
    #[error("bitstring {0} has zero amplitude under the model")]
    ZeroAmplitude(String),
    #[error("model has zero norm")]
    DegenerateModel,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("problem too large: {0}")]
    TooLarge(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("cost callback failed: {0}")]
    Cost(String),
}

impl Error {
    /// True for errors caused by malformed input rather than numerics.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Numerical(_) | Error::DegenerateModel)
    }
}
