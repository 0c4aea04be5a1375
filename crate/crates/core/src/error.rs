use thiserror::Error;

/// Errors raised by the library. The CLI maps [`Error::is_config`] to exit
/// code 2 and everything else to exit code 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("rect outside grid")]
    RectOutsideGrid,
    #[error("zero distance")]
    ZeroDistance,
    #[error("not a grid point: {0}")]
    NotGridPoint(String),
    #[error("no admissible corner inside the rectangle at level {0}")]
    NoCorner(i32),
    #[error("not cell-aligned: {0}")]
    NotCellAligned(String),
    #[error("counter space overflow: {0}")]
    CounterOverflow(String),
    #[error("stability violated: dt = {dt} exceeds dx^2/2 = {cap}")]
    Unstable { dt: f64, cap: f64 },
    #[error("blow-up: non-finite value at time row {row}")]
    BlowUp { row: usize },
    #[error("grid too large: {0}")]
    Budget(String),
    #[error("window violation: {0}")]
    Window(String),
    #[error("covariance indefinite (smallest eigenvalue {0:e})")]
    Indefinite(f64),
    #[error("q too large for grid: {0}")]
    Resolution(String),
    #[error("grid too high: all exceedances zero")]
    GridTooHigh,
    #[error("sample too small: {0}")]
    SampleTooSmall(String),
    #[error("grid misalignment: {0}")]
    Misaligned(String),
    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),
    #[error("malformed dump: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by invalid user input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Json(_) | Error::Domain(_) | Error::Unstable { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
