use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid motif list: {0}")]
    InvalidMotif(String),
    #[error("hinge {hinge} references missing cube {cube}")]
    DanglingHinge { hinge: usize, cube: usize },
    #[error("hinge {hinge} joins cubes {a} and {b} which share no face")]
    NonAdjacent { hinge: usize, a: usize, b: usize },
    #[error("declared loop does not close: {0}")]
    OpenLoop(String),
    #[error("reference layout has overlapping cubes {0} and {1}")]
    SelfColliding(usize, usize),
    #[error("index {0} out of range")]
    BadIndex(usize),
    #[error("bad edge code {0}")]
    BadEdgeCode(u8),
    #[error("state has {got} angles, structure has {want} hinges")]
    StateLength { got: usize, want: usize },
    #[error("state is off the closure manifold (residual {0:.3e})")]
    NotOnManifold(f64),
    #[error("solver did not converge (residual {0:.3e})")]
    NoConvergence(f64),
    #[error("driven angles are incompatible with closure (residual {0:.3e})")]
    DrivenOverconstrained(f64),
    #[error("collision at step {step} between cubes {pairs:?}")]
    CollisionOnPath { step: usize, pairs: Vec<(usize, usize)> },
    #[error("path ended {0:.3e} away from the requested state")]
    WrongEndpoint(f64),
    #[error("state is not a lattice state")]
    NotLattice,
    #[error("graph limit exceeded: {0}")]
    LimitExceeded(String),
    #[error("unknown node key {0}")]
    UnknownKey(String),
    #[error("no route between the requested nodes")]
    Unreachable,
    #[error("empty target shape")]
    EmptyTarget,
    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),
    #[error("empty database")]
    EmptyDatabase,
    #[error("result refers to a stale database entry")]
    StaleResult,
    #[error("path has no admissible driver set inside the candidate hinges")]
    UncoverablePath(usize),
    #[error("closure drift at step {0}")]
    ClosureDrift(usize),
    #[error("schedule drives hinge {0}, which has no motor")]
    UnassignedHinge(usize),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
