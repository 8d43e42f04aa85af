use thiserror::Error;

/// Errors raised across the toolkit.
///
/// Variants map onto the failure classes callers need to tell apart: the CLI
/// turns them into distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("degenerate statistics: {0}")]
    DegenerateStats(String),
    #[error("degenerate feature: {0}")]
    DegenerateFeature(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite loss at step {step}: {breakdown}")]
    NonFinite { step: usize, breakdown: String },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("unsupported checkpoint version {found} (this build reads version {expected})")]
    Version { found: u8, expected: u8 },
    #[error("image encoding error: {0}")]
    Image(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
