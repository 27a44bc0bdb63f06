use super::{Body, Message, TransportError};
use crate::federation::local_update;
use crate::model::{Example, ParameterVector};

/// What the node does after handling one coordinator message.
#[derive(Clone, Debug, PartialEq)]
pub enum AgentStep {
    Reply(Message),
    Continue,
    Finished,
}

/// Node-side protocol state: owns the local examples, answers GLOBAL_MODEL
/// with LOCAL_UPDATE and stops at SHUTDOWN.
#[derive(Clone, Debug)]
pub struct NodeAgent {
    node_id: String,
    examples: Vec<Example>,
    rounds_trained: u32,
    last_digest: Option<[u8; 32]>,
}

impl NodeAgent {
    pub fn new(node_id: impl Into<String>, examples: Vec<Example>) -> Result<Self, TransportError> {
        let node_id = node_id.into();
        if examples.is_empty() {
            return Err(TransportError::Protocol(format!("node {node_id} has no training samples")));
        }
        Ok(NodeAgent { node_id, examples, rounds_trained: 0, last_digest: None })
    }

    pub fn node_id(&self) -> &str {
        &self.node_id
    }

    pub fn num_samples(&self) -> u64 {
        self.examples.len() as u64
    }

    pub fn rounds_trained(&self) -> u32 {
        self.rounds_trained
    }

    /// Digest from the most recent ROUND_RESULT.
    pub fn last_digest(&self) -> Option<[u8; 32]> {
        self.last_digest
    }

    pub fn join_message(&self) -> Message {
        Message { round_index: 0, node_id: self.node_id.clone(), body: Body::Join { num_samples: self.num_samples() } }
    }

    pub fn error_message(&self, round_index: u32, err: &TransportError) -> Message {
        Message {
            round_index,
            node_id: self.node_id.clone(),
            body: Body::Error { code: err.wire_code(), message: err.to_string() },
        }
    }

    pub fn handle(&mut self, msg: Message) -> Result<AgentStep, TransportError> {
        match msg.body {
            Body::GlobalModel { directive, params } => {
                if msg.node_id != self.node_id {
                    return Err(TransportError::Protocol(format!(
                        "GLOBAL_MODEL addressed to {:?}, this node is {:?}",
                        msg.node_id, self.node_id
                    )));
                }
                let directive = directive.to_directive()?;
                let global = ParameterVector::new(params)?;
                directive.model.check_params(&global)?;
                let update = local_update(&self.node_id, &self.examples, &global, &directive, msg.round_index)?;
                self.rounds_trained += 1;
                log::debug!("node {}: trained round {}, loss {}", self.node_id, msg.round_index, update.train_loss);
                Ok(AgentStep::Reply(Message {
                    round_index: msg.round_index,
                    node_id: self.node_id.clone(),
                    body: Body::LocalUpdate {
                        num_samples: update.num_samples,
                        train_loss: update.train_loss,
                        params: update.params.into_inner(),
                    },
                }))
            }
            Body::RoundResult { digest } => {
                self.last_digest = Some(digest);
                Ok(AgentStep::Continue)
            }
            Body::Shutdown => Ok(AgentStep::Finished),
            Body::Error { code, message } => Err(TransportError::Remote { code, message }),
            other => Err(TransportError::Protocol(format!("node received {}", other.kind_name()))),
        }
    }
}
