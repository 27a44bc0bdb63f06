use std::net::TcpListener;
use std::thread;
use std::time::Duration;

use fedhorizon::data::{synthesize_dataset, SiteSpec, SynthSpec};
use fedhorizon::federation::{run_federation, run_single_node};
use fedhorizon::transport::{error_codes, node_run, Body, CodecError, Coordinator, FrameCodec, Message, NetworkConfig, NodeAgent, TransportError};
use fedhorizon::{FederationConfig, Hyperparameters, ModelSpec, SiteDataset};

fn sites() -> Vec<SiteDataset> {
    synthesize_dataset(&SynthSpec {
        sites: vec![
            SiteSpec { site_id: "nih".into(), class_counts: vec![12, 10, 9, 11] },
            SiteSpec { site_id: "ucl".into(), class_counts: vec![2, 3, 1, 3] },
            SiteSpec { site_id: "test".into(), class_counts: vec![3, 3, 3, 3] },
        ],
        feature_dim: 8,
        class_separation: 2.5,
        seed: 21,
    })
    .unwrap()
}

fn cfg() -> FederationConfig {
    FederationConfig {
        num_rounds: 4,
        alpha: 1e-3,
        model: ModelSpec::new(8, 6, 4, 0.2).unwrap(),
        hyper: Hyperparameters { learning_rate: 0.05, local_epochs: 1, batch_size: 4, reg_weight: 0.0, seed: 3 },
        seed: 8,
    }
}

fn quick_net() -> NetworkConfig {
    NetworkConfig {
        node_timeout: Duration::from_secs(20),
        join_timeout: Duration::from_secs(20),
        connect_backoff: Duration::from_millis(20),
        ..NetworkConfig::default()
    }
}

fn spawn_node(addr: String, site: &SiteDataset) -> thread::JoinHandle<Result<fedhorizon::transport::NodeOutcome, TransportError>> {
    let agent = NodeAgent::new(site.site_id(), site.examples().unwrap()).unwrap();
    thread::spawn(move || node_run(&addr, agent, &quick_net()))
}

#[test]
fn single_loopback_node_matches_single_node_run() {
    let s = sites();
    let c = cfg();
    let coord = Coordinator::bind("127.0.0.1:0", quick_net()).unwrap();
    let addr = coord.local_addr().unwrap().to_string();
    let node = spawn_node(addr, &s[0]);
    let (p_net, h_net) = coord.serve(&c, &["nih".to_string()], &s[2].examples().unwrap()).unwrap();
    let outcome = node.join().unwrap().unwrap();
    assert_eq!(outcome.rounds_trained, 4);
    let (p_sim, h_sim) = run_single_node(&s[0], &s[2], &c).unwrap();
    assert_eq!(p_net.to_le_bytes(), p_sim.to_le_bytes());
    assert_eq!(h_net.digest(), h_sim.digest());
}

#[test]
fn two_loopback_nodes_match_simulation() {
    let s = sites();
    let c = cfg();
    let coord = Coordinator::bind("127.0.0.1:0", quick_net()).unwrap();
    let addr = coord.local_addr().unwrap().to_string();
    let nodes: Vec<_> = s[..2].iter().map(|site| spawn_node(addr.clone(), site)).collect();
    let ids = vec!["nih".to_string(), "ucl".to_string()];
    let (p_net, h_net) = coord.serve(&c, &ids, &s[2].examples().unwrap()).unwrap();
    let (p_sim, h_sim) = run_federation(&c, &s[..2], &s[2]).unwrap();
    for n in nodes {
        let out = n.join().unwrap().unwrap();
        assert_eq!(out.final_digest.map(hex::encode), Some(p_sim.digest()));
    }
    assert_eq!(p_net.to_le_bytes(), p_sim.to_le_bytes());
    assert_eq!(h_net.digest(), h_sim.digest());
}

#[test]
fn duplicate_join_aborts() {
    let s = sites();
    let coord = Coordinator::bind("127.0.0.1:0", quick_net()).unwrap();
    let addr = coord.local_addr().unwrap().to_string();
    let first = spawn_node(addr.clone(), &s[0]);
    thread::sleep(Duration::from_millis(100));
    let second = spawn_node(addr, &s[0]);
    let ids = vec!["nih".to_string(), "ucl".to_string()];
    let err = coord.serve(&cfg(), &ids, &[]).unwrap_err();
    assert!(matches!(err, TransportError::DuplicateJoin(ref id) if id == "nih"), "{err}");
    for h in [first, second] {
        assert!(matches!(h.join().unwrap(), Err(TransportError::Remote { code: error_codes::DUPLICATE_JOIN, .. })));
    }
}

#[test]
fn silent_node_times_out() {
    let s = sites();
    let net = NetworkConfig { node_timeout: Duration::from_millis(300), ..quick_net() };
    let coord = Coordinator::bind("127.0.0.1:0", net).unwrap();
    let addr = coord.local_addr().unwrap();
    let silent = thread::spawn(move || {
        let codec = FrameCodec::default();
        let mut stream = std::net::TcpStream::connect(addr).unwrap();
        codec.write_frame(&mut stream, &Message { round_index: 0, node_id: "ucl".into(), body: Body::Join { num_samples: 9 } }).unwrap();
        let mut seen = Vec::new();
        while let Ok(Some(m)) = codec.read_frame(&mut stream) {
            seen.push(m.body.kind());
        }
        seen
    });
    let good = spawn_node(addr.to_string(), &s[0]);
    let err = coord.serve(&cfg(), &["nih".to_string(), "ucl".to_string()], &[]).unwrap_err();
    assert!(matches!(err, TransportError::Timeout(_)), "{err}");
    assert_eq!(silent.join().unwrap(), vec![2, 6]);
    assert!(matches!(good.join().unwrap(), Err(TransportError::Remote { code: error_codes::TIMEOUT, .. })));
}

#[test]
fn dead_endpoint_fails_after_retries() {
    let addr = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().to_string()
    };
    let agent = NodeAgent::new("n", sites()[0].examples().unwrap()).unwrap();
    let err = node_run(&addr, agent, &quick_net()).unwrap_err();
    assert!(matches!(err, TransportError::Connect { attempts: 3, .. }), "{err}");
}

#[test]
fn shutdown_first_is_a_clean_exit() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let coord = thread::spawn(move || {
        let codec = FrameCodec::default();
        let (mut stream, _) = listener.accept().unwrap();
        let join = codec.read_frame(&mut stream).unwrap().unwrap();
        codec.write_frame(&mut stream, &Message { round_index: 0, node_id: String::new(), body: Body::Shutdown }).unwrap();
        join
    });
    let agent = NodeAgent::new("n", sites()[1].examples().unwrap()).unwrap();
    let out = node_run(&addr, agent, &quick_net()).unwrap();
    assert_eq!(out.rounds_trained, 0);
    assert_eq!(out.final_digest, None);
    assert_eq!(coord.join().unwrap().body, Body::Join { num_samples: 9 });
}

#[test]
fn version_mismatch_gets_error_reply() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let coord = thread::spawn(move || {
        use std::io::Write;
        let codec = FrameCodec::default();
        let (mut stream, _) = listener.accept().unwrap();
        codec.read_frame(&mut stream).unwrap().unwrap();
        let mut frame = codec.encode(&Message { round_index: 0, node_id: String::new(), body: Body::Shutdown }).unwrap();
        frame[4] = 2;
        stream.write_all(&frame).unwrap();
        codec.read_frame(&mut stream).unwrap().unwrap()
    });
    let agent = NodeAgent::new("n", sites()[1].examples().unwrap()).unwrap();
    let err = node_run(&addr, agent, &quick_net()).unwrap_err();
    assert!(matches!(err, TransportError::Codec { source: CodecError::VersionMismatch(2), .. }), "{err}");
    let reply = coord.join().unwrap();
    assert_eq!(reply.body.kind(), 6);
    assert!(matches!(reply.body, Body::Error { code: 3, .. }));
}

#[test]
fn unknown_node_is_turned_away() {
    let s = sites();
    let coord = Coordinator::bind("127.0.0.1:0", quick_net()).unwrap();
    let addr = coord.local_addr().unwrap().to_string();
    let stranger = spawn_node(addr.clone(), &s[2]);
    thread::sleep(Duration::from_millis(100));
    let node = spawn_node(addr, &s[1]);
    let mut c = cfg();
    c.num_rounds = 1;
    coord.serve(&c, &["ucl".to_string()], &[]).unwrap();
    assert_eq!(node.join().unwrap().unwrap().rounds_trained, 1);
    assert!(matches!(stranger.join().unwrap(), Err(TransportError::Remote { code: error_codes::UNKNOWN_NODE, .. })));
}
