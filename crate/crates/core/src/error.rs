use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("voltage {volts} V on pad {pad} outside [0, {max}] V")]
    VoltageOutOfRange { pad: usize, volts: f64, max: f64 },

    #[error("pad index {index} out of range (layout has {count} pads)")]
    InvalidPad { index: usize, count: usize },

    #[error("grid mismatch: expected {expected:?}, got {got:?}")]
    GridMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error(
        "solver did not converge after {iterations} iterations (relative residual {residual:e})"
    )]
    NotConverged { iterations: usize, residual: f64 },

    #[error("region {0} lies outside the membrane")]
    RegionOutsideDomain(String),

    #[error("target displacement {requested:e} m outside reachable range [{min:e}, {max:e}] m")]
    Unreachable { requested: f64, min: f64, max: f64 },

    #[error(
        "no plane configuration meets the {threshold:e} m rms threshold (best {best_rms:e} m)"
    )]
    NoFeasiblePlanes { threshold: f64, best_rms: f64 },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("trace error: {0}")]
    Trace(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
