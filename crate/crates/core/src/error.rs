use crate::conic::SolveStatus;
use crate::feeder::ValidationReport;

/// Crate-wide error type. Domain failures carry enough context to print a
/// one-line diagnostic; IO and serialization errors wrap their sources.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("feeder document: {0}")]
    FeederDocument(String),

    #[error("invalid feeder model:\n{0}")]
    InvalidFeeder(ValidationReport),

    #[error("power flow diverged: voltage collapse at bus {bus} (iteration {iteration})")]
    VoltageCollapse { bus: String, iteration: usize },

    #[error("power flow did not converge within {max_iter} iterations (residual {residual:.3e})")]
    NoConvergence { max_iter: usize, residual: f64 },

    #[error("injection vectors malformed: {0}")]
    BadInjections(String),

    #[error("conic problem malformed: {0}")]
    BadProblem(String),

    #[error("infeasible bounds: {0}")]
    InfeasibleBounds(String),

    #[error("conic solve terminated with status {status:?}")]
    SolveFailed { status: SolveStatus },

    #[error("inverter overloaded: active output {p_g} exceeds rating {s_rated}")]
    InverterOverload { p_g: f64, s_rated: f64 },

    #[error("scenario data: {0}")]
    ScenarioData(String),

    #[error("regression: {0}")]
    Regression(String),

    #[error("rank-deficient design matrix (column {column})")]
    RankDeficient { column: usize },

    #[error("simulation: {0}")]
    Simulation(String),

    #[error("{0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for filesystem-level failures, false for domain failures.
    /// Callers use this to pick process exit codes.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}
