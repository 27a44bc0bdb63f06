//! Federated averaging.
//!
//! Party `k` holds `N_k` examples out of `N = Σ N_j`. Its aggregation weight
//! is `λ_k = N_k / N` and its local objective carries the regularizer
//! `α·N/(N_k·P)·‖θ‖²`, so that `Σ λ_k J_k` is exactly the pooled objective
//! with regularization `α`. A round broadcasts the global parameters, lets
//! every party run local SGD on its own objective, and replaces the global
//! parameters by the `λ`-weighted mean of the returned vectors.

mod engine;
mod history;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataError;
use crate::metrics::MetricsError;
use crate::model::{Hyperparameters, ModelError, ModelSpec, ParameterVector};

pub use engine::{
    drive, evaluate, local_update, run_centralized, run_federation, run_nodes, run_round, run_single_node, LocalExecutor, LocalNode,
    RoundExecutor, TrainingDirective, CENTRALIZED_NODE_ID,
};
pub use history::{NodeRoundRecord, RoundRecord, TrainingHistory};

#[derive(Debug, Error)]
pub enum FederationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid federation config: {0}")]
    InvalidConfig(String),
    #[error("no participating nodes")]
    NoNodes,
    #[error("node {0} has no training samples")]
    EmptyNode(String),
    #[error("node sizes must all be at least 1")]
    ZeroSize,
    #[error("duplicate node id {0}")]
    DuplicateNode(String),
    #[error("update from {node_id} has {actual} parameters, expected {expected}")]
    LengthMismatch { node_id: String, expected: usize, actual: usize },
    #[error("updates mix rounds {0} and {1}")]
    MixedRounds(u32, u32),
    #[error("round {round}: {message}")]
    Barrier { round: u32, message: String },
    #[error("node {node_id}: {message}")]
    Node { node_id: String, message: String },
    #[error("transport: {0}")]
    Transport(String),
}

/// Settings shared by every party of a federation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub num_rounds: usize,
    /// Global regularization weight α.
    pub alpha: f64,
    pub model: ModelSpec,
    /// Local optimizer settings; `reg_weight` is ignored and recomputed per
    /// party, `seed` is the base of the per-round training seeds.
    pub hyper: Hyperparameters,
    /// Seed for the initial global parameters.
    pub seed: u64,
}

impl FederationConfig {
    pub fn validate(&self) -> Result<(), FederationError> {
        self.model.validate()?;
        Hyperparameters { reg_weight: 0.0, ..self.hyper }.validate()?;
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(FederationError::InvalidConfig(format!("alpha must be nonnegative, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// One party's contribution to a round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundUpdate {
    pub node_id: String,
    pub params: ParameterVector,
    /// `N_k`.
    pub num_samples: u64,
    pub round_index: u32,
    /// Local objective at the returned parameters (dropout off).
    pub train_loss: f64,
}

/// `λ_k = N_k / Σ N_j`.
pub fn compute_weights(node_sizes: &[u64]) -> Result<Vec<f64>, FederationError> {
    if node_sizes.is_empty() {
        return Err(FederationError::NoNodes);
    }
    if node_sizes.contains(&0) {
        return Err(FederationError::ZeroSize);
    }
    let total: u64 = node_sizes.iter().sum();
    Ok(node_sizes.iter().map(|&n| n as f64 / total as f64).collect())
}

/// `α·N/(N_k·P)`, evaluated as `α · (N / (N_k·P))` so that `N_k = N/P`
/// returns `α` exactly.
pub fn local_reg_weight(alpha: f64, n_total: u64, n_k: u64, parties: u64) -> Result<f64, FederationError> {
    let denom = n_k.checked_mul(parties).unwrap_or(0);
    if denom == 0 {
        return Err(FederationError::ZeroSize);
    }
    Ok(alpha * (n_total as f64 / denom as f64))
}

/// Sample-weighted mean of the updates, accumulated in ascending `node_id`
/// order whatever the input order.
pub fn aggregate(updates: &[RoundUpdate]) -> Result<ParameterVector, FederationError> {
    let first = updates.first().ok_or(FederationError::NoNodes)?;
    let mut seen = BTreeSet::new();
    for u in updates {
        if !seen.insert(u.node_id.as_str()) {
            return Err(FederationError::DuplicateNode(u.node_id.clone()));
        }
        if u.round_index != first.round_index {
            return Err(FederationError::MixedRounds(first.round_index, u.round_index));
        }
        if u.params.len() != first.params.len() {
            return Err(FederationError::LengthMismatch {
                node_id: u.node_id.clone(),
                expected: first.params.len(),
                actual: u.params.len(),
            });
        }
    }
    let mut ordered: Vec<&RoundUpdate> = updates.iter().collect();
    ordered.sort_by(|a, b| a.node_id.cmp(&b.node_id));
    let sizes: Vec<u64> = ordered.iter().map(|u| u.num_samples).collect();
    let weights = compute_weights(&sizes)?;

    let mut acc: Vec<f64> = ordered[0].params.as_slice().iter().map(|v| weights[0] * v).collect();
    for (u, w) in ordered.iter().zip(&weights).skip(1) {
        for (a, v) in acc.iter_mut().zip(u.params.as_slice()) {
            *a += w * v;
        }
    }
    Ok(ParameterVector::new(acc)?)
}
