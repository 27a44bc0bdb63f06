//! Round orchestration, shared by the in-process simulator and the networked
//! coordinator.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;

use super::{aggregate, local_reg_weight, FederationConfig, FederationError, NodeRoundRecord, RoundRecord, RoundUpdate, TrainingHistory};
use crate::data::SiteDataset;
use crate::metrics::MetricsReport;
use crate::model::{empirical_risk, init_parameters, predict, train_local, Example, Hyperparameters, ModelError, ModelSpec, ParameterVector};
use crate::seed::derive_seed;

/// Node id used for the pooled dataset in [`run_centralized`].
pub const CENTRALIZED_NODE_ID: &str = "centralized";

/// What the coordinator asks a node to do in one round.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingDirective {
    pub model: ModelSpec,
    /// Carries the node's rescaled regularization and the round's seed.
    pub hyper: Hyperparameters,
}

/// Node-side work for one round: local SGD from `global`, then the local
/// objective at the result.
pub fn local_update(
    node_id: &str,
    examples: &[Example],
    global: &ParameterVector,
    directive: &TrainingDirective,
    round_index: u32,
) -> Result<RoundUpdate, ModelError> {
    let params = train_local(&directive.model, global, examples, &directive.hyper)?;
    let train_loss = empirical_risk(&directive.model, &params, examples, directive.hyper.reg_weight)?;
    Ok(RoundUpdate {
        node_id: node_id.to_string(),
        params,
        num_samples: examples.len() as u64,
        round_index,
        train_loss,
    })
}

/// Where a round's local training happens.
pub trait RoundExecutor {
    /// `(node_id, N_k)` for every participant.
    fn node_sizes(&self) -> Vec<(String, u64)>;

    /// Runs one round on every node and returns all of their updates.
    fn execute_round(
        &mut self,
        round: u32,
        global: &ParameterVector,
        directives: &[(String, TrainingDirective)],
    ) -> Result<Vec<RoundUpdate>, FederationError>;

    /// Called once the new global parameters are known.
    fn round_completed(&mut self, _round: u32, _global: &ParameterVector) -> Result<(), FederationError> {
        Ok(())
    }
}

/// A party's data held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalNode {
    pub node_id: String,
    pub examples: Vec<Example>,
    /// Replaces the shared learning rate, epochs, batch size and seed base.
    pub hyper_override: Option<Hyperparameters>,
}

impl LocalNode {
    pub fn new(node_id: impl Into<String>, examples: Vec<Example>) -> Self {
        LocalNode { node_id: node_id.into(), examples, hyper_override: None }
    }

    pub fn from_site(site: &SiteDataset) -> Result<Self, FederationError> {
        Ok(Self::new(site.site_id(), site.examples()?))
    }
}

/// Trains every node in this process. Nodes of one round run in parallel;
/// results are collected in node order.
pub struct LocalExecutor<'a> {
    nodes: &'a [LocalNode],
}

impl<'a> LocalExecutor<'a> {
    pub fn new(nodes: &'a [LocalNode]) -> Self {
        LocalExecutor { nodes }
    }
}

impl RoundExecutor for LocalExecutor<'_> {
    fn node_sizes(&self) -> Vec<(String, u64)> {
        self.nodes.iter().map(|n| (n.node_id.clone(), n.examples.len() as u64)).collect()
    }

    fn execute_round(
        &mut self,
        round: u32,
        global: &ParameterVector,
        directives: &[(String, TrainingDirective)],
    ) -> Result<Vec<RoundUpdate>, FederationError> {
        let by_id: BTreeMap<&str, &TrainingDirective> = directives.iter().map(|(id, d)| (id.as_str(), d)).collect();
        self.nodes
            .par_iter()
            .map(|node| {
                let directive = by_id.get(node.node_id.as_str()).ok_or_else(|| FederationError::Node {
                    node_id: node.node_id.clone(),
                    message: "no directive for node".into(),
                })?;
                local_update(&node.node_id, &node.examples, global, directive, round).map_err(|e| FederationError::Node {
                    node_id: node.node_id.clone(),
                    message: e.to_string(),
                })
            })
            .collect()
    }
}

fn canonical_sizes(mut sizes: Vec<(String, u64)>) -> Result<Vec<(String, u64)>, FederationError> {
    if sizes.is_empty() {
        return Err(FederationError::NoNodes);
    }
    sizes.sort();
    for w in sizes.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(FederationError::DuplicateNode(w[0].0.clone()));
        }
    }
    if let Some((id, _)) = sizes.iter().find(|(_, n)| *n == 0) {
        return Err(FederationError::EmptyNode(id.clone()));
    }
    Ok(sizes)
}

/// Per-node directives for round `round`: shared settings, the node's
/// `α·N/(N_k·P)` regularization and the seed `derive_seed(base, round)`,
/// where `base` is the shared `hyper.seed` unless the node overrides it.
fn round_directives(
    cfg: &FederationConfig,
    sizes: &[(String, u64)],
    overrides: &BTreeMap<String, Hyperparameters>,
    round: u32,
) -> Result<Vec<(String, TrainingDirective)>, FederationError> {
    let total: u64 = sizes.iter().map(|(_, n)| n).sum();
    let parties = sizes.len() as u64;
    sizes
        .iter()
        .map(|(id, n)| {
            let base = overrides.get(id).copied().unwrap_or(cfg.hyper);
            let hyper = Hyperparameters {
                reg_weight: local_reg_weight(cfg.alpha, total, *n, parties)?,
                seed: derive_seed(base.seed, round as u64),
                ..base
            };
            Ok((id.clone(), TrainingDirective { model: cfg.model, hyper }))
        })
        .collect()
}

fn check_barrier(round: u32, sizes: &[(String, u64)], updates: &[RoundUpdate], param_len: usize) -> Result<(), FederationError> {
    let barrier = |message: String| Err(FederationError::Barrier { round, message });
    if updates.len() != sizes.len() {
        return barrier(format!("expected {} updates, received {}", sizes.len(), updates.len()));
    }
    let expected: BTreeMap<&str, u64> = sizes.iter().map(|(id, n)| (id.as_str(), *n)).collect();
    for u in updates {
        match expected.get(u.node_id.as_str()) {
            None => return barrier(format!("update from unknown node {}", u.node_id)),
            Some(&n) if n != u.num_samples => {
                return barrier(format!("node {} reported {} samples, joined with {n}", u.node_id, u.num_samples))
            }
            _ => {}
        }
        if u.round_index != round {
            return barrier(format!("node {} sent an update for round {}", u.node_id, u.round_index));
        }
        if u.params.len() != param_len {
            return Err(FederationError::LengthMismatch { node_id: u.node_id.clone(), expected: param_len, actual: u.params.len() });
        }
    }
    Ok(())
}

/// Argmax predictions of `params` on `test`, scored over 1-based labels.
pub fn evaluate(spec: &ModelSpec, params: &ParameterVector, test: &[Example]) -> Result<MetricsReport, FederationError> {
    let mut truth = Vec::with_capacity(test.len());
    let mut predicted = Vec::with_capacity(test.len());
    for ex in test {
        truth.push(ex.class + 1);
        predicted.push(predict(spec, params, &ex.features)? + 1);
    }
    Ok(MetricsReport::evaluate(&truth, &predicted, spec.num_classes)?)
}

/// Runs `cfg.num_rounds` rounds through `executor`, starting from
/// `init_parameters(cfg.model, cfg.seed)`. Every round waits for all
/// updates before aggregating; the aggregate is scored on `test` when it is
/// nonempty.
pub fn drive<E: RoundExecutor + ?Sized>(
    cfg: &FederationConfig,
    executor: &mut E,
    test: &[Example],
) -> Result<(ParameterVector, TrainingHistory), FederationError> {
    drive_with_overrides(cfg, executor, test, &BTreeMap::new())
}

fn drive_with_overrides<E: RoundExecutor + ?Sized>(
    cfg: &FederationConfig,
    executor: &mut E,
    test: &[Example],
    overrides: &BTreeMap<String, Hyperparameters>,
) -> Result<(ParameterVector, TrainingHistory), FederationError> {
    cfg.validate()?;
    let sizes = canonical_sizes(executor.node_sizes())?;
    let mut global = init_parameters(&cfg.model, cfg.seed);
    let mut history = TrainingHistory::default();
    for r in 0..cfg.num_rounds {
        let round = u32::try_from(r).map_err(|_| FederationError::InvalidConfig("too many rounds".into()))?;
        let started = Instant::now();
        let directives = round_directives(cfg, &sizes, overrides, round)?;
        let updates = executor.execute_round(round, &global, &directives)?;
        check_barrier(round, &sizes, &updates, global.len())?;
        global = aggregate(&updates)?;
        let test_report = if test.is_empty() { None } else { Some(evaluate(&cfg.model, &global, test)?) };
        let mut nodes: Vec<NodeRoundRecord> = updates
            .iter()
            .map(|u| NodeRoundRecord { node_id: u.node_id.clone(), num_samples: u.num_samples, train_loss: u.train_loss })
            .collect();
        nodes.sort_by(|a, b| a.node_id.cmp(&b.node_id));
        log::debug!("round {round}: aggregated {} updates", updates.len());
        executor.round_completed(round, &global)?;
        history.rounds.push(RoundRecord {
            round,
            params_digest: global.digest(),
            nodes,
            test: test_report,
            wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok((global, history))
}

/// One round in process: broadcast `global`, train each node on its
/// rescaled local objective, aggregate.
pub fn run_round(
    global: &ParameterVector,
    nodes: &[LocalNode],
    cfg: &FederationConfig,
    round: u32,
) -> Result<ParameterVector, FederationError> {
    cfg.validate()?;
    cfg.model.check_params(global)?;
    let mut executor = LocalExecutor::new(nodes);
    let sizes = canonical_sizes(executor.node_sizes())?;
    let directives = round_directives(cfg, &sizes, &overrides_of(nodes), round)?;
    let updates = executor.execute_round(round, global, &directives)?;
    check_barrier(round, &sizes, &updates, global.len())?;
    aggregate(&updates)
}

fn overrides_of(nodes: &[LocalNode]) -> BTreeMap<String, Hyperparameters> {
    nodes.iter().filter_map(|n| n.hyper_override.map(|h| (n.node_id.clone(), h))).collect()
}

/// Full in-process federation over `sites`, one node per site.
pub fn run_federation(
    cfg: &FederationConfig,
    sites: &[SiteDataset],
    test: &SiteDataset,
) -> Result<(ParameterVector, TrainingHistory), FederationError> {
    let nodes = sites.iter().map(LocalNode::from_site).collect::<Result<Vec<_>, _>>()?;
    run_nodes(cfg, &nodes, &test.examples()?)
}

/// In-process federation over prepared nodes, honouring per-node overrides.
pub fn run_nodes(
    cfg: &FederationConfig,
    nodes: &[LocalNode],
    test: &[Example],
) -> Result<(ParameterVector, TrainingHistory), FederationError> {
    drive_with_overrides(cfg, &mut LocalExecutor::new(nodes), test, &overrides_of(nodes))
}

/// A single site training alone: a one-party federation.
pub fn run_single_node(
    site: &SiteDataset,
    test: &SiteDataset,
    cfg: &FederationConfig,
) -> Result<(ParameterVector, TrainingHistory), FederationError> {
    run_federation(cfg, std::slice::from_ref(site), test)
}

/// Training on the disjoint union of all sites with regularization `α`.
/// Sites are pooled in ascending `site_id` order, so the input order of
/// `sites` does not matter.
pub fn run_centralized(
    sites: &[SiteDataset],
    test: &SiteDataset,
    cfg: &FederationConfig,
) -> Result<(ParameterVector, TrainingHistory), FederationError> {
    let mut ordered: Vec<&SiteDataset> = sites.iter().collect();
    ordered.sort_by(|a, b| a.site_id().cmp(b.site_id()));
    let mut pooled = Vec::new();
    for s in ordered {
        pooled.extend(s.examples()?);
    }
    if pooled.is_empty() {
        return Err(FederationError::EmptyNode(CENTRALIZED_NODE_ID.into()));
    }
    let node = LocalNode::new(CENTRALIZED_NODE_ID, pooled);
    run_nodes(cfg, std::slice::from_ref(&node), &test.examples()?)
}
