use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The basis (or a matrix standing in for it) is too close to rank deficient.
    #[error("degenerate basis: sigma_min = {sigma_min:.3e} (geometric bottleneck)")]
    DegenerateBasis { sigma_min: f64 },

    #[error("capacity violation: K = {k} exceeds d + 1 = {}", .d + 1)]
    CapacityViolation { k: usize, d: usize },

    #[error("invalid distortion: {0}")]
    InvalidDistortion(String),

    #[error("inversion failure: {0}")]
    InversionFailure(String),

    #[error("calibration degenerate: boundary states coincide")]
    CalibrationDegenerate,

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context { context: context.into(), source: Box::new(self) }
    }

    /// Innermost error, skipping any attached context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            e => e,
        }
    }
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
