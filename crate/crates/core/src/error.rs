use thiserror::Error;

/// Errors raised by the solvers and their input validation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("density value {value} at cell {cell} is negative")]
    NegativeDensity { cell: usize, value: f64 },
    #[error("operation requires a bounded domain")]
    UnboundedDomain,
    #[error("density has zero total mass")]
    ZeroMass,
    #[error("measure is not a probability (total mass {total})")]
    NotProbability { total: f64 },
    #[error("source mass {source_mass} and target mass {target_mass} differ")]
    UnbalancedMasses { source_mass: f64, target_mass: f64 },
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("plan has a disconnected flow graph and carries no dual certificate")]
    DegeneratePlan,
    #[error("atom {atom} lies outside the domain")]
    AtomOutsideDomain { atom: usize },
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("grid too coarse: atom {atom} owns no grid cell")]
    GridTooCoarse { atom: usize },
    #[error("mass {mass} must be positive")]
    NonpositiveMass { mass: f64 },
    #[error("mass {mass} outside [0, 1]")]
    MassOutOfRange { mass: f64 },
    #[error("atom count k = {k} is invalid")]
    InvalidK { k: usize },
    #[error("atomization condition not satisfied")]
    ConditionNotSatisfied,
    #[error("search space of {size} configurations exceeds the guard {limit}")]
    SearchSpaceTooLarge { size: u128, limit: u128 },
    #[error("solutions live on incompatible grids")]
    IncompatibleGrids,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
