use thiserror::Error;

/// Errors raised by the library.
///
/// Variants fall in two families: validation problems (bad input, bad files)
/// and numerical failures (degenerate stencils, solver breakdown). The CLI maps
/// them to exit codes 2 and 3 respectively.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("rank-deficient local fit (condition estimate {cond:.3e})")]
    RankDeficient { cond: f64 },

    #[error("degenerate local tangent basis at stencil neighbor {neighbor}")]
    DegenerateBasis { neighbor: usize },

    #[error("parametrization is singular at {0:?}")]
    SingularChart(Vec<f64>),

    #[error("{what} did not converge (residual {residual:.3e})")]
    NoConvergence { what: &'static str, residual: f64 },

    #[error("non-finite state at step {step}")]
    BlowUp { step: usize },

    #[error("point {point}: {source}")]
    AtPoint {
        point: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn at(self, point: usize) -> Error {
        match self {
            e @ Error::AtPoint { .. } => e,
            e => Error::AtPoint {
                point,
                source: Box::new(e),
            },
        }
    }

    /// True for input/format problems, false for numerical failures.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Invalid(_) | Error::Parse(_) | Error::Io(_) => true,
            Error::AtPoint { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => return Error::Io(io),
                k => return Error::Parse(format!("{k:?}")),
            }
        }
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
