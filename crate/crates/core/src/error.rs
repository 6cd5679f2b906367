use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("network construction failed: {0}")]
    Construction(String),

    #[error("singular system at node `{label}`: {reason}")]
    Numerical { label: String, reason: String },

    #[error("steady solver did not converge after {iterations} iterations (max residual {residual:.3e} W)")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("frequency out of range: {0}")]
    Range(String),

    #[error("framing error: {0}")]
    Framing(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("pixel {row},{col} is dead")]
    DeadPixel { row: usize, col: usize },

    #[error("fit error: {0}")]
    Fit(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no calibration for pixel {row},{col}")]
    Uncalibrated { row: usize, col: usize },

    #[error("no detection: every pixel is below the {noise_floor} °C noise floor")]
    NoDetection { noise_floor: f64 },
}
