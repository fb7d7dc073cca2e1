use thiserror::Error;

use crate::statevec::Qubit;

#[derive(Debug, Error)]
pub enum Error {
    #[error("basis index {index} out of range for a {qubits}-qubit register")]
    IndexOutOfRange { index: usize, qubits: usize },

    #[error("registers overlap on qubit {0}")]
    OverlappingRegisters(Qubit),

    #[error("duplicate qubit {0} in register")]
    DuplicateQubit(Qubit),

    #[error("register mismatch: {0}")]
    RegisterMismatch(String),

    #[error("register of {requested} qubits exceeds the cap of {cap}")]
    RegisterTooLarge { requested: usize, cap: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("state is not normalized (norm {0})")]
    NotNormalized(f64),

    #[error("operator is not hermitian")]
    NonHermitian,

    #[error(
        "postselection is orthogonal to the preparation (|overlap| = {0:e}); weak value undefined"
    )]
    OrthogonalPostselection(f64),

    #[error("postselected branch vanished (probability {0:e})")]
    VanishingBranch(f64),

    #[error("observable is degenerate (lambda_min = lambda_max = {0})")]
    DegenerateObservable(f64),

    #[error("preparation has zero variance under the observable (variance {0:e})")]
    DegeneratePrep(f64),

    #[error("central-difference step too large: halving changed the result by {change:e} (tolerance {tolerance:e})")]
    StepTooLarge { change: f64, tolerance: f64 },

    #[error("basis is not orthonormal and complete (Gram deviation {0:e})")]
    IncompleteBasis(f64),

    #[error("observable has zero second moment in the preparation")]
    ZeroSecondMoment,

    #[error("parameter {name} = {value} outside the family domain [{lo}, {hi}]")]
    OutsideDomain {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("weak value magnitude {aw} must exceed {bound} for the scaling laws to apply")]
    WeakValueTooSmall { aw: f64, bound: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("outside the linear-response regime: {0}")]
    Regime(String),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
