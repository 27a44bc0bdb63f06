use std::collections::BTreeMap;
use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::thread;
use std::time::{Duration, Instant};

use super::{
    error_codes, params_digest_bytes, update_from_message, AgentStep, Body, FrameCodec, FrameIoError, Message, NetworkConfig,
    NodeAgent, TransportError, WireDirective,
};
use crate::federation::{drive, FederationConfig, FederationError, RoundExecutor, RoundUpdate, TrainingDirective};
use crate::model::{Example, ParameterVector};
use crate::TrainingHistory;

const ACCEPT_POLL: Duration = Duration::from_millis(5);

/// A bound coordinator endpoint that has not started serving yet.
pub struct Coordinator {
    listener: TcpListener,
    net: NetworkConfig,
}

struct Session {
    stream: TcpStream,
    peer: String,
}

impl Coordinator {
    pub fn bind(endpoint: &str, net: NetworkConfig) -> Result<Self, TransportError> {
        let listener = TcpListener::bind(endpoint).map_err(|source| TransportError::Bind { endpoint: endpoint.to_string(), source })?;
        Ok(Coordinator { listener, net })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Waits for one JOIN from each of `node_ids`, runs `cfg.num_rounds`
    /// rounds and sends SHUTDOWN. Any failure is broadcast as ERROR to every
    /// connected node before returning.
    pub fn serve(self, cfg: &FederationConfig, node_ids: &[String], test: &[Example]) -> Result<(ParameterVector, TrainingHistory), TransportError> {
        cfg.validate()?;
        if node_ids.is_empty() {
            return Err(FederationError::NoNodes.into());
        }
        let codec = self.net.codec();
        let mut sessions = BTreeMap::new();
        let sizes = match self.accept_joins(node_ids, &codec, &mut sessions) {
            Ok(s) => s,
            Err(e) => {
                broadcast_error(&codec, &mut sessions, 0, &e);
                return Err(e);
            }
        };
        log::info!("all {} nodes joined", sizes.len());
        let mut ex = TcpExecutor { sessions: &mut sessions, sizes, codec, failure: None };
        match drive(cfg, &mut ex, test) {
            Ok(out) => {
                let failure = ex.broadcast(|_| Body::Shutdown, 0);
                if let Err(e) = failure {
                    log::warn!("SHUTDOWN not delivered everywhere: {e}");
                }
                Ok(out)
            }
            Err(fe) => {
                let err = ex.failure.take().unwrap_or(TransportError::Federation(fe));
                broadcast_error(&codec, &mut sessions, 0, &err);
                Err(err)
            }
        }
    }

    fn accept_joins(&self, node_ids: &[String], codec: &FrameCodec, sessions: &mut BTreeMap<String, Session>) -> Result<Vec<(String, u64)>, TransportError> {
        let deadline = Instant::now() + self.net.join_timeout;
        let mut sizes = Vec::new();
        self.listener.set_nonblocking(true).map_err(|source| TransportError::Io { peer: "listener".into(), source })?;
        while sessions.len() < node_ids.len() {
            let (stream, addr) = match self.listener.accept() {
                Ok(pair) => pair,
                Err(e) if e.kind() == ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        let missing: Vec<&str> = node_ids.iter().filter(|id| !sessions.contains_key(*id)).map(String::as_str).collect();
                        return Err(TransportError::Timeout(format!("JOIN from {}", missing.join(", "))));
                    }
                    thread::sleep(ACCEPT_POLL);
                    continue;
                }
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(source) => return Err(TransportError::Io { peer: "listener".into(), source }),
            };
            let peer = addr.to_string();
            let io = |source| TransportError::Io { peer: peer.clone(), source };
            stream.set_nonblocking(false).map_err(io)?;
            stream.set_read_timeout(Some(self.net.node_timeout)).map_err(io)?;
            stream.set_write_timeout(Some(self.net.node_timeout)).map_err(io)?;
            stream.set_nodelay(true).map_err(io)?;
            let mut session = Session { stream, peer };
            let join = match codec.read_frame(&mut &session.stream) {
                Ok(Some(m)) => m,
                Ok(None) => {
                    log::warn!("{} closed before JOIN", session.peer);
                    continue;
                }
                Err(e) => {
                    let err = TransportError::from_frame(&session.peer, e);
                    log::warn!("rejecting {}: {err}", session.peer);
                    send_error(codec, &mut session, 0, err.wire_code(), &err.to_string());
                    continue;
                }
            };
            let Body::Join { num_samples } = join.body else {
                let msg = format!("expected JOIN, got {}", join.body.kind_name());
                log::warn!("rejecting {}: {msg}", session.peer);
                send_error(codec, &mut session, 0, error_codes::PROTOCOL, &msg);
                continue;
            };
            let id = join.node_id;
            if sessions.contains_key(&id) {
                let err = TransportError::DuplicateJoin(id);
                send_error(codec, &mut session, 0, err.wire_code(), &err.to_string());
                return Err(err);
            }
            if !node_ids.contains(&id) {
                log::warn!("rejecting JOIN from unknown node {id:?} at {}", session.peer);
                send_error(codec, &mut session, 0, error_codes::UNKNOWN_NODE, &format!("node {id} is not part of this federation"));
                continue;
            }
            log::info!("node {id} joined from {} with {num_samples} samples", session.peer);
            sizes.push((id.clone(), num_samples));
            sessions.insert(id, session);
        }
        Ok(sizes)
    }
}

/// Binds `endpoint` and serves one federation; see [`Coordinator::serve`].
pub fn coordinator_serve(
    endpoint: &str,
    cfg: &FederationConfig,
    node_ids: &[String],
    test: &[Example],
    net: NetworkConfig,
) -> Result<(ParameterVector, TrainingHistory), TransportError> {
    Coordinator::bind(endpoint, net)?.serve(cfg, node_ids, test)
}

fn send_error(codec: &FrameCodec, session: &mut Session, round: u32, code: u16, message: &str) {
    let msg = Message { round_index: round, node_id: String::new(), body: Body::Error { code, message: message.to_string() } };
    if let Err(e) = codec.write_frame(&mut session.stream, &msg) {
        log::debug!("could not send ERROR to {}: {e}", session.peer);
    }
}

fn broadcast_error(codec: &FrameCodec, sessions: &mut BTreeMap<String, Session>, round: u32, err: &TransportError) {
    log::error!("aborting federation: {err}");
    for s in sessions.values_mut() {
        send_error(codec, s, round, err.wire_code(), &err.to_string());
    }
}

struct TcpExecutor<'a> {
    sessions: &'a mut BTreeMap<String, Session>,
    sizes: Vec<(String, u64)>,
    codec: FrameCodec,
    failure: Option<TransportError>,
}

impl TcpExecutor<'_> {
    fn fail(&mut self, e: TransportError) -> FederationError {
        let fe = FederationError::Transport(e.to_string());
        self.failure = Some(e);
        fe
    }

    fn send(&mut self, id: &str, msg: &Message) -> Result<(), TransportError> {
        let session = self.sessions.get_mut(id).ok_or_else(|| TransportError::Protocol(format!("no session for {id}")))?;
        self.codec.write_frame(&mut session.stream, msg).map_err(|e| TransportError::from_frame(id, e))
    }

    fn broadcast(&mut self, body: impl Fn(&str) -> Body, round: u32) -> Result<(), TransportError> {
        let ids: Vec<String> = self.sessions.keys().cloned().collect();
        for id in ids {
            let msg = Message { round_index: round, node_id: id.clone(), body: body(&id) };
            self.send(&id, &msg)?;
        }
        Ok(())
    }

    fn round(&mut self, round: u32, global: &ParameterVector, directives: &[(String, TrainingDirective)]) -> Result<Vec<RoundUpdate>, TransportError> {
        for (id, d) in directives {
            let directive = WireDirective::from_directive(d).map_err(|source| TransportError::Codec { peer: id.clone(), source })?;
            let msg = Message { round_index: round, node_id: id.clone(), body: Body::GlobalModel { directive, params: global.as_slice().to_vec() } };
            self.send(id, &msg)?;
        }
        let codec = self.codec;
        let sessions = &*self.sessions;
        // Nodes train concurrently; each reply is read on its own thread and
        // nothing is aggregated until all of them are in.
        let replies: Vec<Result<RoundUpdate, TransportError>> = thread::scope(|scope| {
            let handles: Vec<_> = directives
                .iter()
                .map(|(id, _)| {
                    let session = &sessions[id];
                    scope.spawn(move || -> Result<RoundUpdate, TransportError> {
                        match codec.read_frame(&mut &session.stream) {
                            Ok(Some(m)) => update_from_message(m, id, round),
                            Ok(None) => Err(TransportError::Closed(id.clone())),
                            Err(FrameIoError::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                                Err(TransportError::Timeout(format!("LOCAL_UPDATE from {id} in round {round}")))
                            }
                            Err(e) => Err(TransportError::from_frame(id, e)),
                        }
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("reader thread panicked")).collect()
        });
        let updates = replies.into_iter().collect::<Result<Vec<_>, _>>()?;
        log::debug!("round {round}: received {} of {} updates", updates.len(), directives.len());
        Ok(updates)
    }
}

impl RoundExecutor for TcpExecutor<'_> {
    fn node_sizes(&self) -> Vec<(String, u64)> {
        self.sizes.clone()
    }

    fn execute_round(&mut self, round: u32, global: &ParameterVector, directives: &[(String, TrainingDirective)]) -> Result<Vec<RoundUpdate>, FederationError> {
        self.round(round, global, directives).map_err(|e| self.fail(e))
    }

    fn round_completed(&mut self, round: u32, global: &ParameterVector) -> Result<(), FederationError> {
        let digest = params_digest_bytes(global);
        self.broadcast(|_| Body::RoundResult { digest }, round).map_err(|e| self.fail(e))
    }
}

/// How a node session ended.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeOutcome {
    pub rounds_trained: u32,
    /// Digest from the last ROUND_RESULT, if any round completed.
    pub final_digest: Option<[u8; 32]>,
}

fn connect(endpoint: &str, net: &NetworkConfig) -> Result<TcpStream, TransportError> {
    let attempts = net.connect_attempts.max(1);
    let mut backoff = net.connect_backoff;
    let mut attempt = 1;
    loop {
        match TcpStream::connect(endpoint) {
            Ok(s) => return Ok(s),
            Err(source) if attempt >= attempts => {
                return Err(TransportError::Connect { endpoint: endpoint.to_string(), attempts, source });
            }
            Err(e) => {
                log::warn!("connect to {endpoint} failed (attempt {attempt}/{attempts}): {e}; retrying in {backoff:?}");
                thread::sleep(backoff);
                backoff *= 2;
                attempt += 1;
            }
        }
    }
}

/// Connects to the coordinator (up to `net.connect_attempts` tries, the wait
/// doubling from `net.connect_backoff`), joins and trains until SHUTDOWN.
///
/// A lost connection after joining ends the session with an error; the
/// coordinator does not accept a second JOIN from the same node.
pub fn node_run(endpoint: &str, mut agent: NodeAgent, net: &NetworkConfig) -> Result<NodeOutcome, TransportError> {
    let codec = net.codec();
    let mut stream = connect(endpoint, net)?;
    let peer = endpoint.to_string();
    stream.set_nodelay(true).map_err(|source| TransportError::Io { peer: peer.clone(), source })?;
    codec.write_frame(&mut stream, &agent.join_message()).map_err(|e| TransportError::from_frame(&peer, e))?;
    let mut round = 0;
    loop {
        let msg = match codec.read_frame(&mut stream) {
            Ok(Some(m)) => m,
            Ok(None) => return Err(TransportError::Closed(peer)),
            Err(FrameIoError::Codec(source)) => {
                let err = TransportError::Codec { peer, source };
                let _ = codec.write_frame(&mut stream, &agent.error_message(round, &err));
                return Err(err);
            }
            Err(e) => return Err(TransportError::from_frame(&peer, e)),
        };
        round = msg.round_index;
        match agent.handle(msg) {
            Ok(AgentStep::Reply(reply)) => codec.write_frame(&mut stream, &reply).map_err(|e| TransportError::from_frame(&peer, e))?,
            Ok(AgentStep::Continue) => {}
            Ok(AgentStep::Finished) => {
                log::info!("node {}: shutdown after {} rounds", agent.node_id(), agent.rounds_trained());
                return Ok(NodeOutcome { rounds_trained: agent.rounds_trained(), final_digest: agent.last_digest() });
            }
            Err(err) => {
                if !matches!(err, TransportError::Remote { .. }) {
                    let _ = codec.write_frame(&mut stream, &agent.error_message(round, &err));
                }
                return Err(err);
            }
        }
    }
}
