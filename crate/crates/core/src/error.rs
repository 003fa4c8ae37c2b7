use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    /// A model parameter is outside its admissible domain.
    #[error("parameter `{name}` out of domain: {value}")]
    ParameterDomain { name: &'static str, value: f64 },

    /// An infusion rate is outside the pump limits.
    #[error("infusion rate `{channel}` = {value} outside [0, {max}]")]
    InputDomain {
        channel: &'static str,
        value: f64,
        max: f64,
    },

    #[error("innovation covariance is not positive: {0}")]
    CovarianceDegeneracy(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for SimError {
    fn from(err: std::io::Error) -> Self {
        SimError::Io(err.to_string())
    }
}

impl From<csv::Error> for SimError {
    fn from(err: csv::Error) -> Self {
        SimError::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SimError>;

pub(crate) fn ensure_positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(SimError::ParameterDomain { name, value })
    }
}
