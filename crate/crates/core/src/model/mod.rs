//! The classifier head `f_θ: ℝ^d → Δ^K` and its training objective.
//!
//! The head is two dense layers with a ReLU in between and dropout on the
//! hidden activations (training only), followed by a softmax. Training
//! minimizes the mean cross-entropy plus `reg_weight · ‖θ‖²` by plain
//! mini-batch SGD.
//!
//! Class labels are 0-based inside this module (`Example::class`); files and
//! [`crate::data::SampleRecord`] use 1-based labels.

mod mlp;
mod params;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mlp::{
    empirical_risk, finite_difference_gradient, forward, gradient, predict, regularized_objective,
    Dropout,
};
pub use params::{format_hex_f64, init_parameters, parse_f64, ParameterVector};
pub use train::train_local;

/// Probability floor applied before taking `-ln p` in the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparameters(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("parameter count mismatch: model needs {expected}, vector has {actual}")]
    ParamCountMismatch { expected: usize, actual: usize },
    #[error("non-finite parameter at index {0}")]
    NonFinite(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("malformed parameter file: {0}")]
    ParamFormat(String),
}

/// Architecture of the classifier head.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub dropout_rate: f64,
}

impl ModelSpec {
    pub const DEFAULT_HIDDEN_DIM: usize = 64;
    pub const DEFAULT_DROPOUT: f64 = 0.2;

    pub fn new(
        input_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        dropout_rate: f64,
    ) -> Result<Self, ModelError> {
        let spec = ModelSpec { input_dim, hidden_dim, num_classes, dropout_rate };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.num_classes == 0 {
            return Err(ModelError::InvalidSpec(format!(
                "dimensions must be positive (d={}, h={}, K={})",
                self.input_dim, self.hidden_dim, self.num_classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::InvalidSpec(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// `(d+1)·h + (h+1)·K`.
    pub fn param_count(&self) -> usize {
        (self.input_dim + 1) * self.hidden_dim + (self.hidden_dim + 1) * self.num_classes
    }

    /// The same architecture with dropout switched off.
    pub fn without_dropout(&self) -> Self {
        ModelSpec { dropout_rate: 0.0, ..*self }
    }

    pub(crate) fn layout(&self) -> Layout {
        let (d, h, k) = (self.input_dim, self.hidden_dim, self.num_classes);
        let w1 = 0;
        let b1 = w1 + h * d;
        let w2 = b1 + h;
        let b2 = w2 + k * h;
        Layout { w1, b1, w2, b2, end: b2 + k }
    }

    pub fn check_params(&self, params: &ParameterVector) -> Result<(), ModelError> {
        if params.len() != self.param_count() {
            return Err(ModelError::ParamCountMismatch {
                expected: self.param_count(),
                actual: params.len(),
            });
        }
        Ok(())
    }
}

/// Offsets of each block inside a [`ParameterVector`].
///
/// Order: layer-1 weights `[hidden][input]` row-major, layer-1 biases,
/// layer-2 weights `[class][hidden]` row-major, layer-2 biases.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Layout {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub end: usize,
}

/// Local optimizer settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    /// Coefficient multiplying `‖θ‖²` in the local objective.
    pub reg_weight: f64,
    pub seed: u64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            learning_rate: 0.05,
            local_epochs: 1,
            batch_size: 32,
            reg_weight: 0.0,
            seed: 0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::InvalidHyperparameters(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.local_epochs == 0 {
            return Err(ModelError::InvalidHyperparameters("local_epochs must be ≥ 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ModelError::InvalidHyperparameters("batch_size must be ≥ 1".into()));
        }
        if !(self.reg_weight >= 0.0 && self.reg_weight.is_finite()) {
            return Err(ModelError::InvalidHyperparameters(format!(
                "reg_weight must be nonnegative, got {}",
                self.reg_weight
            )));
        }
        Ok(())
    }
}

/// One training example as seen by the model: a feature vector and a 0-based class.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub class: usize,
}

impl Example {
    pub fn new(features: Vec<f64>, class: usize) -> Self {
        Example { features, class }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn param_count_example() {
        let spec = ModelSpec::new(4, 8, 4, 0.2).unwrap();
        assert_eq!(spec.param_count(), 76);
        assert_eq!(spec.layout().end, 76);
    }

    #[test]
    fn rejects_degenerate_specs() {
        assert!(ModelSpec::new(0, 8, 4, 0.0).is_err());
        assert!(ModelSpec::new(4, 0, 4, 0.0).is_err());
        assert!(ModelSpec::new(4, 8, 0, 0.0).is_err());
        assert!(ModelSpec::new(4, 8, 4, 1.0).is_err());
        assert!(ModelSpec::new(4, 8, 4, -0.1).is_err());
    }

    #[test]
    fn hyperparameter_validation() {
        let ok = Hyperparameters::default();
        assert!(ok.validate().is_ok());
        assert!(Hyperparameters { learning_rate: 0.0, ..ok }.validate().is_err());
        assert!(Hyperparameters { batch_size: 0, ..ok }.validate().is_err());
        assert!(Hyperparameters { local_epochs: 0, ..ok }.validate().is_err());
        assert!(Hyperparameters { reg_weight: -1.0, ..ok }.validate().is_err());
    }

    proptest! {
        #[test]
        fn param_count_matches_layout(d in 1usize..64, h in 1usize..64, k in 1usize..12) {
            let spec = ModelSpec::new(d, h, k, 0.0).unwrap();
            prop_assert_eq!(spec.param_count(), (d + 1) * h + (h + 1) * k);
            prop_assert_eq!(spec.layout().end, spec.param_count());
            let p = init_parameters(&spec, 1);
            prop_assert_eq!(p.len(), spec.param_count());
        }
    }
}
