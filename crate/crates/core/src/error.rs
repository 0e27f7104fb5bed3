//! Crate-wide error type with a coarse classification used by callers
//! (notably the CLI) to map failures onto a stable exit-code contract.

/// Coarse failure class. `Input` covers malformed or inconsistent inputs
/// (shapes, parse problems), `Precondition` covers inputs that parse fine
/// but violate an operation's contract, `Divergence` covers numerical
/// blow-ups during optimization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Precondition,
    Divergence,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("no points")]
    NoPoints,

    #[error("coincident points: ids {a} and {b}")]
    CoincidentPoints { a: u32, b: u32 },

    #[error("duplicate point id {0}")]
    DuplicateId(u32),

    #[error("point id 0 is reserved for background")]
    ZeroId,

    #[error("point ({y}, {x}) outside field bounds {h}x{w}")]
    PointOutOfBounds { y: f64, x: f64, h: usize, w: usize },

    #[error("score {0} outside [0, 1]")]
    InvalidScore(f64),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("orphan instance: annotation for id {0} lies on background")]
    OrphanInstance(u32),

    #[error("no supervisable instances")]
    NoSupervisableInstances,

    #[error("no valid pseudo-masks")]
    NoValidPseudoMasks,

    #[error("numerical divergence at step {0}")]
    Divergence(usize),

    #[error("scene packing failed after {0} attempts")]
    PackingFailure(usize),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            DuplicateId(_) | ZeroId | PointOutOfBounds { .. } | InvalidScore(_)
            | DimMismatch(_) | Parse(_) => ErrorKind::Input,
            NoPoints | CoincidentPoints { .. } | InvalidArgument(_) | OrphanInstance(_)
            | NoSupervisableInstances | NoValidPseudoMasks | PackingFailure(_) => {
                ErrorKind::Precondition
            }
            Divergence(_) => ErrorKind::Divergence,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
