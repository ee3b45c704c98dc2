use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no signal: both detector channels recorded zero counts")]
    NoSignal,

    #[error("rotation angle {0} rad outside [0, pi]")]
    PhiOutOfRange(f64),

    #[error("degenerate calibration design: {0}")]
    DegenerateCalibration(String),

    #[error("degenerate measurement geometry: {0}")]
    DegenerateGeometry(String),

    #[error("point ({x:e}, {z:e}) m lies outside the scan grid")]
    OutOfBounds { x: f64, z: f64 },

    #[error("gaussian fit failed after {iterations} iterations (cost {cost:e}, mu {mu:e}, sigma {sigma:e}): {reason}")]
    FitFailure {
        iterations: usize,
        cost: f64,
        mu: f64,
        sigma: f64,
        reason: String,
    },

    #[error("calibration target unreachable: {0}")]
    CalibrationUnreachable(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("schema error in {file}: {reason}")]
    Schema { file: String, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn schema(file: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Schema {
            file: file.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_)
            | Error::NoSignal
            | Error::PhiOutOfRange(_)
            | Error::OutOfBounds { .. }
            | Error::Config(_)
            | Error::Schema { .. } => 2,
            Error::DegenerateCalibration(_)
            | Error::DegenerateGeometry(_)
            | Error::FitFailure { .. }
            | Error::CalibrationUnreachable(_) => 3,
            Error::Io { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be finite, got {v}")))
    }
}
