//! Coordinator/node wire protocol.
//!
//! A federation over the network runs the same round engine as the in-process
//! simulator ([`crate::federation::drive`]); only the place where local
//! training happens changes. Nodes join with their sample count, receive the
//! global parameters together with a [`WireDirective`] for every round, and
//! answer with their locally trained parameters. Nothing else leaves a node.
//!
//! * [`codec`]: frame layout and the stateless [`FrameCodec`].
//! * [`NodeAgent`]: the node-side state machine, shared by TCP and in-process
//!   modes.
//! * [`InProcessExecutor`]: sequential transport that passes every message
//!   through the codec.
//! * [`Coordinator`] and [`node_run`]: TCP endpoints.

pub mod codec;
mod agent;
mod inproc;
mod tcp;

use std::time::Duration;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::federation::{FederationError, RoundUpdate, TrainingDirective};
use crate::model::{Hyperparameters, ModelError, ModelSpec, ParameterVector};

pub use agent::{AgentStep, NodeAgent};
pub use codec::{decode_message, encode_message, CodecError, FrameCodec, FrameIoError, DEFAULT_MAX_FRAME};
pub use inproc::{run_in_process, InProcessExecutor};
pub use tcp::{coordinator_serve, node_run, Coordinator, NodeOutcome};

pub const PROTOCOL_VERSION: u8 = 1;

/// ERROR codes outside the codec range (`CodecError::code` uses 1..=9).
pub mod error_codes {
    pub const DUPLICATE_JOIN: u16 = 100;
    pub const UNKNOWN_NODE: u16 = 101;
    pub const TIMEOUT: u16 = 102;
    pub const PROTOCOL: u16 = 103;
    pub const TRAINING_FAILED: u16 = 104;
    pub const ABORTED: u16 = 105;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub round_index: u32,
    /// Sender for node messages, recipient for coordinator messages.
    pub node_id: String,
    pub body: Body,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Body {
    Join { num_samples: u64 },
    GlobalModel { directive: WireDirective, params: Vec<f64> },
    LocalUpdate { num_samples: u64, train_loss: f64, params: Vec<f64> },
    RoundResult { digest: [u8; 32] },
    Shutdown,
    Error { code: u16, message: String },
}

impl Body {
    pub fn kind(&self) -> u8 {
        match self {
            Body::Join { .. } => 1,
            Body::GlobalModel { .. } => 2,
            Body::LocalUpdate { .. } => 3,
            Body::RoundResult { .. } => 4,
            Body::Shutdown => 5,
            Body::Error { .. } => 6,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Body::Join { .. } => "JOIN",
            Body::GlobalModel { .. } => "GLOBAL_MODEL",
            Body::LocalUpdate { .. } => "LOCAL_UPDATE",
            Body::RoundResult { .. } => "ROUND_RESULT",
            Body::Shutdown => "SHUTDOWN",
            Body::Error { .. } => "ERROR",
        }
    }
}

/// Model architecture and local optimizer settings as sent in GLOBAL_MODEL.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WireDirective {
    pub input_dim: u32,
    pub hidden_dim: u32,
    pub num_classes: u32,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub local_epochs: u32,
    pub batch_size: u32,
    pub reg_weight: f64,
    pub seed: u64,
}

impl WireDirective {
    pub fn from_directive(d: &TrainingDirective) -> Result<Self, CodecError> {
        let narrow = |v: usize, what: &str| u32::try_from(v).map_err(|_| CodecError::InvalidField(format!("{what} {v} exceeds u32")));
        Ok(WireDirective {
            input_dim: narrow(d.model.input_dim, "input_dim")?,
            hidden_dim: narrow(d.model.hidden_dim, "hidden_dim")?,
            num_classes: narrow(d.model.num_classes, "num_classes")?,
            dropout_rate: d.model.dropout_rate,
            learning_rate: d.hyper.learning_rate,
            local_epochs: narrow(d.hyper.local_epochs, "local_epochs")?,
            batch_size: narrow(d.hyper.batch_size, "batch_size")?,
            reg_weight: d.hyper.reg_weight,
            seed: d.hyper.seed,
        })
    }

    pub fn to_directive(&self) -> Result<TrainingDirective, ModelError> {
        let model = ModelSpec::new(self.input_dim as usize, self.hidden_dim as usize, self.num_classes as usize, self.dropout_rate)?;
        let hyper = Hyperparameters {
            learning_rate: self.learning_rate,
            local_epochs: self.local_epochs as usize,
            batch_size: self.batch_size as usize,
            reg_weight: self.reg_weight,
            seed: self.seed,
        };
        hyper.validate()?;
        Ok(TrainingDirective { model, hyper })
    }
}

/// Network knobs. Defaults: 300 s node timeout, 300 s to collect every JOIN,
/// 3 connection attempts with 250 ms initial backoff doubling per retry, and
/// a 64 MiB frame cap.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetworkConfig {
    /// Longest the coordinator waits for any single node message.
    pub node_timeout: Duration,
    pub join_timeout: Duration,
    pub connect_attempts: u32,
    pub connect_backoff: Duration,
    pub max_frame: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            node_timeout: Duration::from_secs(300),
            join_timeout: Duration::from_secs(300),
            connect_attempts: 3,
            connect_backoff: Duration::from_millis(250),
            max_frame: DEFAULT_MAX_FRAME,
        }
    }
}

impl NetworkConfig {
    pub fn codec(&self) -> FrameCodec {
        FrameCodec::new(self.max_frame)
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("cannot bind {endpoint}: {source}")]
    Bind {
        endpoint: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot connect to {endpoint} after {attempts} attempts: {source}")]
    Connect {
        endpoint: String,
        attempts: u32,
        #[source]
        source: std::io::Error,
    },
    #[error("I/O error talking to {peer}: {source}")]
    Io {
        peer: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{peer}: {source}")]
    Codec {
        peer: String,
        #[source]
        source: CodecError,
    },
    #[error("timed out waiting for {0}")]
    Timeout(String),
    #[error("duplicate JOIN from node {0}")]
    DuplicateJoin(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("peer reported error {code}: {message}")]
    Remote { code: u16, message: String },
    #[error("connection to {0} closed unexpectedly")]
    Closed(String),
    #[error(transparent)]
    Federation(#[from] FederationError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl TransportError {
    pub(crate) fn from_frame(peer: &str, e: FrameIoError) -> Self {
        match e {
            FrameIoError::Codec(source) => TransportError::Codec { peer: peer.to_string(), source },
            FrameIoError::Io(source) if matches!(source.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                TransportError::Timeout(peer.to_string())
            }
            FrameIoError::Io(source) => TransportError::Io { peer: peer.to_string(), source },
        }
    }

    /// Code to put in an ERROR message about this failure.
    pub fn wire_code(&self) -> u16 {
        match self {
            TransportError::Codec { source, .. } => source.code(),
            TransportError::Timeout(_) => error_codes::TIMEOUT,
            TransportError::DuplicateJoin(_) => error_codes::DUPLICATE_JOIN,
            TransportError::Protocol(_) => error_codes::PROTOCOL,
            TransportError::Model(_) => error_codes::TRAINING_FAILED,
            _ => error_codes::ABORTED,
        }
    }
}

/// Checks a node's reply for `round` and turns it into a [`RoundUpdate`].
pub(crate) fn update_from_message(msg: Message, expected_id: &str, round: u32) -> Result<RoundUpdate, TransportError> {
    if msg.node_id != expected_id {
        return Err(TransportError::Protocol(format!("expected a message from {expected_id}, got one from {}", msg.node_id)));
    }
    match msg.body {
        Body::LocalUpdate { num_samples, train_loss, params } => {
            if msg.round_index != round {
                return Err(TransportError::Protocol(format!(
                    "{expected_id} sent an update for round {} during round {round}",
                    msg.round_index
                )));
            }
            Ok(RoundUpdate { node_id: msg.node_id, params: ParameterVector::new(params)?, num_samples, round_index: round, train_loss })
        }
        Body::Error { code, message } => Err(TransportError::Remote { code, message }),
        other => Err(TransportError::Protocol(format!("expected LOCAL_UPDATE from {expected_id}, got {}", other.kind_name()))),
    }
}

/// Raw SHA-256 of the parameters' little-endian bytes, as sent in ROUND_RESULT.
pub fn params_digest_bytes(params: &ParameterVector) -> [u8; 32] {
    Sha256::digest(params.to_le_bytes()).into()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directive_round_trip() {
        let d = TrainingDirective {
            model: ModelSpec::new(12, 8, 4, 0.2).unwrap(),
            hyper: Hyperparameters { learning_rate: 0.05, local_epochs: 2, batch_size: 16, reg_weight: 1.5e-3, seed: u64::MAX },
        };
        let w = WireDirective::from_directive(&d).unwrap();
        assert_eq!(w.to_directive().unwrap(), d);
        let bad = WireDirective { batch_size: 0, ..w };
        assert!(bad.to_directive().is_err());
    }

    #[test]
    fn kinds_are_numbered_one_to_six() {
        let bodies = [
            Body::Join { num_samples: 1 },
            Body::GlobalModel {
                directive: WireDirective::from_directive(&TrainingDirective { model: ModelSpec::new(1, 1, 1, 0.0).unwrap(), hyper: Hyperparameters::default() }).unwrap(),
                params: vec![],
            },
            Body::LocalUpdate { num_samples: 1, train_loss: 0.0, params: vec![] },
            Body::RoundResult { digest: [0; 32] },
            Body::Shutdown,
            Body::Error { code: 1, message: String::new() },
        ];
        let kinds: Vec<u8> = bodies.iter().map(Body::kind).collect();
        assert_eq!(kinds, vec![1, 2, 3, 4, 5, 6]);
    }
}
