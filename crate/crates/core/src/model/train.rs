use rand::seq::SliceRandom;

use super::mlp::{backprop, check_batch, dropout_mask};
use super::{Example, Hyperparameters, ModelError, ModelSpec, ParameterVector};
use crate::seed::rng_from_seed;

/// Local mini-batch SGD on `data` starting from `params`.
///
/// One ChaCha8 stream seeded with `hyper.seed` drives everything random.
/// Each epoch shuffles the example order with Fisher–Yates (unless one batch
/// already covers the whole dataset, in which case the stored order is kept),
/// then walks consecutive chunks of `batch_size`. When the model has a positive
/// dropout rate, a fresh mask is drawn per example before its batch's step.
/// Each step is `θ ← θ − η·∇J_B(θ)` with `J_B` the batch mean cross-entropy
/// plus `hyper.reg_weight·‖θ‖²`.
pub fn train_local(
    spec: &ModelSpec,
    params: &ParameterVector,
    data: &[Example],
    hyper: &Hyperparameters,
) -> Result<ParameterVector, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    spec.validate()?;
    spec.check_params(params)?;
    hyper.validate()?;
    check_batch(spec, data)?;

    let mut rng = rng_from_seed(hyper.seed);
    let mut theta = params.as_slice().to_vec();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut batch: Vec<Example> = Vec::with_capacity(hyper.batch_size.min(data.len()));

    for _ in 0..hyper.local_epochs {
        if hyper.batch_size < data.len() {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(hyper.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            let masks: Option<Vec<Vec<f64>>> = (spec.dropout_rate > 0.0).then(|| {
                (0..batch.len())
                    .map(|_| dropout_mask(spec.dropout_rate, spec.hidden_dim, &mut rng))
                    .collect()
            });
            let grad = backprop(spec, &theta, &batch, masks.as_deref(), hyper.reg_weight);
            for (t, g) in theta.iter_mut().zip(&grad) {
                *t -= hyper.learning_rate * g;
            }
        }
    }
    ParameterVector::new(theta)
}
