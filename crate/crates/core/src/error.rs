use thiserror::Error;

/// Errors raised anywhere in the analysis pipeline.
///
/// Every variant belongs to exactly one [`ErrorClass`], which the command-line
/// front end maps onto its exit code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("invalid subject record: {0}")]
    InvalidRecord(String),

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no covariates to adjust for")]
    NoCovariates,

    #[error("arm {0} has no subjects")]
    EmptyArm(u8),

    #[error("horizon beyond observed risk: tau = {tau} exceeds maximum follow-up {max_followup}")]
    HorizonBeyondRisk { tau: f64, max_followup: f64 },

    #[error("survival vanished before horizon at t = {0}")]
    SurvivalVanished(f64),

    #[error("log-ratio undefined: area is zero in arm {0}")]
    LogRatioUndefined(u8),

    #[error("singular covariate Gram matrix in arm {arm}: collinear columns {columns:?}")]
    SingularGram { arm: u8, columns: Vec<String> },

    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("too many failed replicates: {failed} of {total}; first failure: {first}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

/// Coarse classification of errors, one per command-line exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numerical => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ErrorClass::Usage => "usage",
            ErrorClass::Data => "data",
            ErrorClass::Numerical => "numerical",
        }
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Parse { .. }
            | Error::InvalidRecord(_)
            | Error::DuplicateId(_)
            | Error::InvalidInput(_)
            | Error::NoCovariates
            | Error::EmptyArm(_)
            | Error::Io(_) => ErrorClass::Data,
            Error::HorizonBeyondRisk { .. }
            | Error::SurvivalVanished(_)
            | Error::LogRatioUndefined(_)
            | Error::SingularGram { .. }
            | Error::NonPositiveVariance(_)
            | Error::Contract(_)
            | Error::TooManyFailures { .. } => ErrorClass::Numerical,
            Error::InvalidScenario(_) => ErrorClass::Usage,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
