use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::metrics::MetricsReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRoundRecord {
    pub node_id: String,
    pub num_samples: u64,
    pub train_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    /// SHA-256 of the aggregated parameters (little-endian bytes).
    pub params_digest: String,
    pub nodes: Vec<NodeRoundRecord>,
    /// Evaluation of the aggregated parameters on the hold-out set, if any.
    pub test: Option<MetricsReport>,
    /// Excluded from [`TrainingHistory::digest`].
    pub wall_time_ms: f64,
}

/// Per-round log of a training run. One entry per completed round.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub rounds: Vec<RoundRecord>,
}

impl TrainingHistory {
    /// SHA-256 over every deterministic field (wall times excluded), hex.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.rounds {
            h.update(r.round.to_be_bytes());
            h.update(r.params_digest.as_bytes());
            for n in &r.nodes {
                h.update((n.node_id.len() as u64).to_be_bytes());
                h.update(n.node_id.as_bytes());
                h.update(n.num_samples.to_be_bytes());
                h.update(n.train_loss.to_le_bytes());
            }
            match &r.test {
                None => h.update([0u8]),
                Some(m) => {
                    h.update([1u8]);
                    h.update(serde_json::to_vec(m).expect("metrics serialize"));
                }
            }
        }
        hex::encode(h.finalize())
    }

    pub fn final_metrics(&self) -> Option<&MetricsReport> {
        self.rounds.last().and_then(|r| r.test.as_ref())
    }

    /// The history with all wall times zeroed, for byte-stable output.
    pub fn without_timings(&self) -> Self {
        let mut h = self.clone();
        for r in &mut h.rounds {
            r.wall_time_ms = 0.0;
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_ignores_wall_time_only() {
        let rec = RoundRecord {
            round: 0,
            params_digest: "ab".into(),
            nodes: vec![NodeRoundRecord { node_id: "n".into(), num_samples: 3, train_loss: 0.5 }],
            test: None,
            wall_time_ms: 1.0,
        };
        let a = TrainingHistory { rounds: vec![rec.clone()] };
        let mut b = a.clone();
        b.rounds[0].wall_time_ms = 99.0;
        assert_eq!(a.digest(), b.digest());
        b.rounds[0].nodes[0].train_loss = 0.25;
        assert_ne!(a.digest(), b.digest());
        assert_ne!(TrainingHistory::default().digest(), a.digest());
    }
}
