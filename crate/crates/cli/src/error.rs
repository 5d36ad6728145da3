use smoothfool::attack::AttackError;
use smoothfool::data::DataError;
use smoothfool::fixture::FixtureError;
use smoothfool::metrics::MetricsError;
use smoothfool::net::NetError;
use smoothfool::tensor::TensorError;
use smoothfool::universal::UapError;
use thiserror::Error;

/// Diagnostic categories; each maps to one process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn data(context: impl std::fmt::Display, err: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{context}: {err}"))
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::NonFiniteLoss { .. } | NetError::Tensor(_) => CliError::Numeric(e.to_string()),
            NetError::TrainConfig(_) | NetError::Descriptor(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<FixtureError> for CliError {
    fn from(e: FixtureError) -> Self {
        match e {
            FixtureError::Unknown(_) => CliError::Config(e.to_string()),
            FixtureError::Net(n) => n.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<AttackError> for CliError {
    fn from(e: AttackError) -> Self {
        match e {
            AttackError::InvalidConfig(_) => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::Io(_) | TensorError::Corrupt(_) => CliError::Data(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<UapError> for CliError {
    fn from(e: UapError) -> Self {
        match e {
            UapError::InvalidConfig(_) => CliError::Config(e.to_string()),
            UapError::Empty => CliError::Data(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}
