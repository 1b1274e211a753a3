use thiserror::Error;

/// Errors produced by mesh construction, assembly, and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),
    #[error("boundary classifier left edge at ({x}, {y}) unassigned")]
    UnassignedEdge { x: f64, y: f64 },
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("mesh import failed at line {line}: {message}")]
    MeshImport { line: usize, message: String },
    #[error("quadrature produced a non-finite value in {0}")]
    Quadrature(String),
    #[error("invalid exponent p = {0}; need p >= 1")]
    InvalidExponent(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("initial data violate the sign condition 1/2 n0 +- n.m >= 0 in cell {cell}")]
    SignCondition { cell: usize },
    #[error("bound sequence requires alpha * dt < 1 (got {0})")]
    BoundSequence(f64),
    #[error("field size mismatch: {0}")]
    SizeMismatch(String),
    #[error("singular linear system: {0}")]
    Singular(String),
    #[error("linear solver did not converge: {0}")]
    LinearSolver(String),
    #[error("Newton iteration failed after {iterations} iterations (residual {residual:e})")]
    NewtonFailure { iterations: usize, residual: f64 },
    #[error("Picard iteration stagnated after {iterations} iterations (increment {increment:e})")]
    PicardStagnation { iterations: usize, increment: f64 },
    #[error("negative density {value:e} in cell {cell}")]
    NegativeDensity { cell: usize, value: f64 },
    #[error("edge {0} is not a Dirichlet edge")]
    NotDirichlet(usize),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contact segment not resolvable: {0}")]
    ContactResolution(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
