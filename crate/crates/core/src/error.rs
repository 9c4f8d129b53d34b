use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("profile kind mismatch: expected {expected}, found {found}")]
    KindMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("band [{lo}, {hi}] Hz is not covered by the grid [{grid_lo}, {grid_hi}] Hz")]
    Coverage {
        lo: f64,
        hi: f64,
        grid_lo: f64,
        grid_hi: f64,
    },

    #[error("grids do not match: {0}")]
    GridMismatch(String),

    #[error("step size error: {0}")]
    StepSize(String),

    #[error("hole depth undefined: initial optical depth is zero inside the window")]
    UndefinedDepth,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("aliasing error: {0}")]
    Aliasing(String),

    #[error("window matching error: {0}")]
    Matching(String),

    #[error("gating error: {0}")]
    Gating(String),

    #[error("detector saturated: click probability {0} must be below 1")]
    Saturation(f64),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("optimizer did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence {
        iterations: usize,
        residual: f64,
        best: Box<crate::tomography::ChiMatrix>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of an iterative solver rather than of the inputs.
    pub fn is_convergence(&self) -> bool {
        matches!(self, Error::Convergence { .. })
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
