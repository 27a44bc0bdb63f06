//! Error classification into the process exit-code contract.

use fedhorizon::config::ConfigError;
use fedhorizon::data::DataError;
use fedhorizon::federation::FederationError;
use fedhorizon::model::ModelError;
use fedhorizon::transport::TransportError;

pub const USAGE: u8 = 1;
pub const DATA: u8 = 2;
pub const NETWORK: u8 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: USAGE, error: error.into() }
    }

    pub fn data(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: DATA, error: error.into() }
    }

    pub fn context(self, what: impl std::fmt::Display + Send + Sync + 'static) -> Self {
        Failure { code: self.code, error: self.error.context(what) }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let code = match e {
            ConfigError::Data(_) => DATA,
            _ => USAGE,
        };
        Failure { code, error: e.into() }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure::data(e)
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::data(e)
    }
}

fn federation_code(e: &FederationError) -> u8 {
    match e {
        FederationError::InvalidConfig(_) => USAGE,
        FederationError::Transport(_) => NETWORK,
        _ => DATA,
    }
}

impl From<FederationError> for Failure {
    fn from(e: FederationError) -> Self {
        Failure { code: federation_code(&e), error: e.into() }
    }
}

impl From<TransportError> for Failure {
    fn from(e: TransportError) -> Self {
        let code = match &e {
            TransportError::Federation(f) => federation_code(f),
            TransportError::Model(_) => DATA,
            _ => NETWORK,
        };
        Failure { code, error: e.into() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transport_failures_are_network_errors() {
        let f: Failure = TransportError::Timeout("node a".into()).into();
        assert_eq!(f.code, NETWORK);
        let f: Failure = TransportError::Federation(FederationError::EmptyNode("a".into())).into();
        assert_eq!(f.code, DATA);
    }

    #[test]
    fn config_errors_split_between_usage_and_data() {
        assert_eq!(Failure::from(ConfigError::Invalid("x".into())).code, USAGE);
        assert_eq!(Failure::from(ConfigError::Data(DataError::EmptyImage)).code, DATA);
    }
}
