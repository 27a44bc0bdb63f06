//! Horizontal federated learning for small classifier heads.
//!
//! Modules:
//!
//! * [`model`]: a two-layer perceptron head, its regularized empirical risk,
//!   analytic gradients and local mini-batch SGD.
//! * [`data`]: sample manifests, patient-level splits, image preprocessing and
//!   augmentation, feature extraction and synthetic site generation.
//! * [`federation`]: FedAvg weights, per-party regularization, the round
//!   engine and the single-node / centralized baselines.
//! * [`transport`]: the coordinator/node wire protocol, a TCP coordinator and
//!   node, and an in-process transport speaking the same messages.
//! * [`metrics`]: confusion matrices, per-class precision/recall/F1,
//!   macro-F1, accuracy and the binary collapse.
//! * [`config`]: the JSON experiment configuration.

pub mod config;
pub mod data;
pub mod federation;
pub mod metrics;
pub mod model;
pub mod seed;
pub mod transport;

pub use data::{Payload, SampleRecord, SiteDataset};
pub use federation::{FederationConfig, RoundUpdate, TrainingHistory};
pub use metrics::{ConfusionMatrix, MetricsReport};
pub use model::{Example, Hyperparameters, ModelSpec, ParameterVector};
