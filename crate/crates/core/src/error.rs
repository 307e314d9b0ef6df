use thiserror::Error;

/// Errors raised while building states, ensembles, protocols and certificates.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("all amplitudes are zero")]
    ZeroState,

    #[error("shape mismatch: expected {expected:?}, got {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("matrix is not unitary (deviation {deviation:.3e})")]
    NotUnitary { deviation: f64 },

    #[error("decomposition failed: {0}")]
    DecompositionFailure(String),

    #[error("states {first} and {second} are not orthogonal (|overlap| = {overlap:.3e})")]
    NotOrthogonal {
        first: usize,
        second: usize,
        overlap: f64,
    },

    #[error("dimension mismatch: expected {expected:?}, got {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("ensemble is empty")]
    Empty,

    #[error("duplicate state label {0:?}")]
    DuplicateLabel(String),

    #[error("unknown example {0:?}")]
    UnknownExample(String),

    #[error("{requested} states requested but the joint space has dimension {capacity}")]
    TooManyStates { requested: usize, capacity: usize },

    #[error("malformed protocol tree: {0}")]
    MalformedTree(String),

    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),

    #[error("unknown protocol {0:?}")]
    UnknownProtocol(String),

    #[error("bad certificate assignment: {0}")]
    BadAssignment(String),

    #[error("state {state:?} is not reproduced by its product vectors (error {error:.3e})")]
    ReconstructionFailure { state: String, error: f64 },

    #[error("product vectors {first} and {second} are not orthonormal (overlap {overlap:.3e})")]
    VectorsNotOrthogonal {
        first: usize,
        second: usize,
        overlap: f64,
    },

    #[error("no local protocol found for the product vectors within depth {depth}")]
    ProductSetNotDistinguishable { depth: usize },

    #[error("2x2 classification requires a 2x2 system with 1..=4 states, got {dim_a}x{dim_b} with {states} states")]
    WrongDimensions {
        dim_a: usize,
        dim_b: usize,
        states: usize,
    },

    #[error("no state survives the outcome")]
    EmptyOutcome,

    #[error("invalid search configuration: {0}")]
    InvalidConfig(String),

    #[error("could not build a protocol: {0}")]
    ProtocolConstruction(String),
}

impl Error {
    /// Variant name, used as a stable error kind in reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::ZeroState => "ZeroState",
            Self::ShapeMismatch { .. } => "ShapeMismatch",
            Self::NotUnitary { .. } => "NotUnitary",
            Self::DecompositionFailure(_) => "DecompositionFailure",
            Self::NotOrthogonal { .. } => "NotOrthogonal",
            Self::DimensionMismatch { .. } => "DimensionMismatch",
            Self::Empty => "Empty",
            Self::DuplicateLabel(_) => "DuplicateLabel",
            Self::UnknownExample(_) => "UnknownExample",
            Self::TooManyStates { .. } => "TooManyStates",
            Self::MalformedTree(_) => "MalformedTree",
            Self::InvalidMeasurement(_) => "InvalidMeasurement",
            Self::UnknownProtocol(_) => "UnknownProtocol",
            Self::BadAssignment(_) => "BadAssignment",
            Self::ReconstructionFailure { .. } => "ReconstructionFailure",
            Self::VectorsNotOrthogonal { .. } => "VectorsNotOrthogonal",
            Self::ProductSetNotDistinguishable { .. } => "ProductSetNotDistinguishable",
            Self::WrongDimensions { .. } => "WrongDimensions",
            Self::EmptyOutcome => "EmptyOutcome",
            Self::InvalidConfig(_) => "InvalidConfig",
            Self::ProtocolConstruction(_) => "ProtocolConstruction",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
