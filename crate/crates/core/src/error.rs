use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("range error: value {value} outside [{lo}, {hi}]")]
    Range { value: f64, lo: f64, hi: f64 },
    #[error("not invertible: samples fail strict monotonicity near {at}")]
    NotInvertible { at: f64 },
    #[error("invalid rate: {0}")]
    InvalidRate(String),
    #[error("numerical failure after t = {last_valid_time}: {reason}")]
    Numerical { last_valid_time: f64, reason: String },
    #[error("blow-up at t = {time}")]
    BlowUp { time: f64 },
    #[error("not class KL: envelope at r = {r} decays only by factor {ratio}")]
    NotKl { r: f64, ratio: f64 },
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
