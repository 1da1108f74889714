use crate::linmodel::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("system validation failed: {}", summarize(.0))]
    Validation(Box<ValidationReport>),

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("no stabilizing solution: {0}")]
    NoSolution(String),

    #[error("linear solve failed: {0}")]
    Singular(String),

    #[error("feasibility inconclusive at lambda={lambda} after {iterations} iterations")]
    Inconclusive { lambda: f64, iterations: usize },

    #[error("critical rate bisection inconclusive on bracket [{lower}, {upper}]")]
    BracketInconclusive { lower: f64, upper: f64 },

    #[error("fixed point did not converge after {iterations} iterations (last relative change {last_change:e}, trace {trace:e})")]
    NonConvergence {
        iterations: usize,
        last_change: f64,
        trace: f64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("config error at {pointer}: {message}")]
    Config { pointer: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn summarize(report: &ValidationReport) -> String {
    report
        .failures
        .iter()
        .map(|f| format!("{} ({})", f.name, f.detail))
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    /// True for errors caused by bad input rather than numerical trouble.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Dimension(_)
                | Error::InvalidArgument(_)
                | Error::Range(_)
                | Error::Validation(_)
                | Error::InvalidSystem(_)
                | Error::Domain(_)
                | Error::Config { .. }
                | Error::Io(_)
        )
    }
}
