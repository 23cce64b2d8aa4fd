use thiserror::Error;

/// Errors raised by mesh construction, space building and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh size must be positive, got {0}")]
    NonPositiveMeshSize(f64),
    #[error("unknown triangle id {0}")]
    UnknownTriangle(usize),
    #[error("unknown vertex id {0}")]
    UnknownVertex(usize),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("polynomial degree must be at least 1 (triangle {triangle} has {degree})")]
    InvalidDegree { triangle: usize, degree: usize },
    #[error("degree vector has length {got}, mesh has {expected} triangles")]
    DegreeLength { expected: usize, got: usize },
    #[error("spaces are not nested: {0}")]
    NotNested(String),
    #[error("singular linear system: {0}")]
    Singular(String),
    #[error("marking parameter theta must lie in (0, 1], got {0}")]
    InvalidTheta(f64),
    #[error("missing patch contribution for vertex {0}")]
    MissingPatch(usize),
    #[error("estimator on marked set vanishes; discrete solution is exact")]
    ZeroMarkedEstimator,
    #[error("reduction bound argument is negative ({0}); lower bound exceeds the estimator")]
    NegativeReduction(f64),
    #[error("degenerate data for fit: {0}")]
    DegenerateFit(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
