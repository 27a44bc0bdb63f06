use super::{params_digest_bytes, update_from_message, AgentStep, Body, FrameCodec, Message, NodeAgent, TransportError, WireDirective};
use crate::federation::{drive, FederationConfig, FederationError, RoundExecutor, RoundUpdate, TrainingDirective};
use crate::model::{Example, ParameterVector};
use crate::TrainingHistory;

/// Runs every node in this process, one after another, passing each message
/// through encode and decode exactly as on the wire.
pub struct InProcessExecutor {
    agents: Vec<NodeAgent>,
    sizes: Vec<(String, u64)>,
    codec: FrameCodec,
    wire: Vec<u8>,
    record: bool,
}

impl InProcessExecutor {
    /// Exchanges a JOIN with every agent.
    pub fn new(agents: Vec<NodeAgent>) -> Result<Self, TransportError> {
        let mut ex = InProcessExecutor { agents, sizes: Vec::new(), codec: FrameCodec::default(), wire: Vec::new(), record: false };
        for i in 0..ex.agents.len() {
            let join = ex.transmit(&ex.agents[i].join_message())?;
            match join.body {
                Body::Join { num_samples } => ex.sizes.push((join.node_id, num_samples)),
                _ => unreachable!("join_message builds a JOIN"),
            }
        }
        Ok(ex)
    }

    /// Keep a copy of every frame; see [`Self::wire_log`].
    pub fn recording(mut self) -> Self {
        self.record = true;
        self
    }

    /// Concatenation of all frames sent so far, when recording.
    pub fn wire_log(&self) -> &[u8] {
        &self.wire
    }

    fn transmit(&mut self, msg: &Message) -> Result<Message, TransportError> {
        let bytes = self.codec.encode(msg).map_err(|source| TransportError::Codec { peer: msg.node_id.clone(), source })?;
        if self.record {
            self.wire.extend_from_slice(&bytes);
        }
        self.codec.decode(&bytes).map_err(|source| TransportError::Codec { peer: msg.node_id.clone(), source })
    }

    fn deliver(&mut self, idx: usize, msg: Message) -> Result<AgentStep, TransportError> {
        let received = self.transmit(&msg)?;
        match self.agents[idx].handle(received)? {
            AgentStep::Reply(reply) => Ok(AgentStep::Reply(self.transmit(&reply)?)),
            step => Ok(step),
        }
    }

    fn index_of(&self, node_id: &str) -> Result<usize, TransportError> {
        self.agents
            .iter()
            .position(|a| a.node_id() == node_id)
            .ok_or_else(|| TransportError::Protocol(format!("no node {node_id}")))
    }

    fn round(&mut self, round: u32, global: &ParameterVector, directives: &[(String, TrainingDirective)]) -> Result<Vec<RoundUpdate>, TransportError> {
        let mut updates = Vec::with_capacity(directives.len());
        for (id, directive) in directives {
            let idx = self.index_of(id)?;
            let directive = WireDirective::from_directive(directive).map_err(|source| TransportError::Codec { peer: id.clone(), source })?;
            let msg = Message { round_index: round, node_id: id.clone(), body: Body::GlobalModel { directive, params: global.as_slice().to_vec() } };
            match self.deliver(idx, msg)? {
                AgentStep::Reply(reply) => updates.push(update_from_message(reply, id, round)?),
                _ => return Err(TransportError::Protocol(format!("{id} did not answer GLOBAL_MODEL"))),
            }
        }
        Ok(updates)
    }

    /// Sends SHUTDOWN to every node.
    pub fn shutdown(&mut self) -> Result<(), TransportError> {
        for i in 0..self.agents.len() {
            let msg = Message { round_index: 0, node_id: self.agents[i].node_id().to_string(), body: Body::Shutdown };
            if self.deliver(i, msg)? != AgentStep::Finished {
                return Err(TransportError::Protocol("node did not stop at SHUTDOWN".into()));
            }
        }
        Ok(())
    }
}

fn to_federation(e: TransportError) -> FederationError {
    match e {
        TransportError::Federation(f) => f,
        TransportError::Model(m) => FederationError::Model(m),
        other => FederationError::Transport(other.to_string()),
    }
}

impl RoundExecutor for InProcessExecutor {
    fn node_sizes(&self) -> Vec<(String, u64)> {
        self.sizes.clone()
    }

    fn execute_round(&mut self, round: u32, global: &ParameterVector, directives: &[(String, TrainingDirective)]) -> Result<Vec<RoundUpdate>, FederationError> {
        self.round(round, global, directives).map_err(to_federation)
    }

    fn round_completed(&mut self, round: u32, global: &ParameterVector) -> Result<(), FederationError> {
        let digest = params_digest_bytes(global);
        for i in 0..self.agents.len() {
            let msg = Message { round_index: round, node_id: self.agents[i].node_id().to_string(), body: Body::RoundResult { digest } };
            self.deliver(i, msg).map_err(to_federation)?;
        }
        Ok(())
    }
}

/// Full federation over the in-process transport, ending with SHUTDOWN.
pub fn run_in_process(cfg: &FederationConfig, agents: Vec<NodeAgent>, test: &[Example]) -> Result<(ParameterVector, TrainingHistory), TransportError> {
    let mut ex = InProcessExecutor::new(agents)?;
    let out = drive(cfg, &mut ex, test)?;
    ex.shutdown()?;
    Ok(out)
}
