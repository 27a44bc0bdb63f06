use rand::Rng;

use super::{Example, ModelError, ModelSpec, ParameterVector, PROB_FLOOR};
use crate::seed::rng_from_seed;

/// Whether `forward` applies dropout to the hidden layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dropout {
    Disabled,
    /// Inverted dropout: kept units are scaled by `1/(1-rate)`; the mask is
    /// drawn from ChaCha8 seeded with `seed`.
    Enabled { seed: u64 },
}

/// Intermediate values of one forward pass, kept for backpropagation.
pub(crate) struct Activations {
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub probs: Vec<f64>,
}

pub(crate) fn check_input(spec: &ModelSpec, features: &[f64]) -> Result<(), ModelError> {
    if features.len() != spec.input_dim {
        return Err(ModelError::DimensionMismatch {
            expected: spec.input_dim,
            actual: features.len(),
        });
    }
    Ok(())
}

pub(crate) fn check_batch(spec: &ModelSpec, batch: &[Example]) -> Result<(), ModelError> {
    for ex in batch {
        check_input(spec, &ex.features)?;
        if ex.class >= spec.num_classes {
            return Err(ModelError::LabelOutOfRange {
                label: ex.class,
                num_classes: spec.num_classes,
            });
        }
    }
    Ok(())
}

/// Dropout scale factors for the hidden layer: `0` or `1/(1-rate)`.
pub(crate) fn dropout_mask<R: Rng>(rate: f64, hidden_dim: usize, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..hidden_dim)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// affine → ReLU (→ mask) → affine → softmax. Shapes are assumed checked.
pub(crate) fn forward_pass(
    spec: &ModelSpec,
    theta: &[f64],
    x: &[f64],
    mask: Option<&[f64]>,
) -> Activations {
    let (d, h, k) = (spec.input_dim, spec.hidden_dim, spec.num_classes);
    let lay = spec.layout();
    let w1 = &theta[lay.w1..lay.b1];
    let b1 = &theta[lay.b1..lay.w2];
    let w2 = &theta[lay.w2..lay.b2];
    let b2 = &theta[lay.b2..lay.end];

    let pre: Vec<f64> = (0..h)
        .map(|j| {
            let row = &w1[j * d..(j + 1) * d];
            b1[j] + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>()
        })
        .collect();
    let mut hidden: Vec<f64> = pre.iter().map(|&z| z.max(0.0)).collect();
    if let Some(mask) = mask {
        for (a, m) in hidden.iter_mut().zip(mask) {
            *a *= m;
        }
    }
    let logits: Vec<f64> = (0..k)
        .map(|c| {
            let row = &w2[c * h..(c + 1) * h];
            b2[c] + row.iter().zip(&hidden).map(|(w, a)| w * a).sum::<f64>()
        })
        .collect();
    Activations { pre, hidden, probs: softmax(&logits) }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn cross_entropy(probs: &[f64], class: usize) -> f64 {
    -probs[class].max(PROB_FLOOR).ln()
}

/// Class probabilities `f_θ(x)`.
pub fn forward(
    spec: &ModelSpec,
    params: &ParameterVector,
    features: &[f64],
    dropout: Dropout,
) -> Result<Vec<f64>, ModelError> {
    spec.check_params(params)?;
    check_input(spec, features)?;
    let mask = match dropout {
        Dropout::Enabled { seed } if spec.dropout_rate > 0.0 => {
            Some(dropout_mask(spec.dropout_rate, spec.hidden_dim, &mut rng_from_seed(seed)))
        }
        _ => None,
    };
    Ok(forward_pass(spec, params.as_slice(), features, mask.as_deref()).probs)
}

/// 0-based argmax of `f_θ(x)` (dropout off). Ties go to the lowest class.
pub fn predict(
    spec: &ModelSpec,
    params: &ParameterVector,
    features: &[f64],
) -> Result<usize, ModelError> {
    let probs = forward(spec, params, features, Dropout::Disabled)?;
    let mut best = 0;
    for (c, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = c;
        }
    }
    Ok(best)
}

/// `(1/|B|) Σ −ln max(p_y, 1e-12) + reg_weight·‖θ‖²`, dropout off.
pub fn empirical_risk(
    spec: &ModelSpec,
    params: &ParameterVector,
    batch: &[Example],
    reg_weight: f64,
) -> Result<f64, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    regularized_objective(spec, params, batch, reg_weight)
}

/// Same objective as [`empirical_risk`] but an empty batch contributes no data
/// term, leaving only `reg_weight·‖θ‖²`.
pub fn regularized_objective(
    spec: &ModelSpec,
    params: &ParameterVector,
    batch: &[Example],
    reg_weight: f64,
) -> Result<f64, ModelError> {
    spec.check_params(params)?;
    check_batch(spec, batch)?;
    Ok(objective_unchecked(spec, params.as_slice(), batch, reg_weight))
}

fn objective_unchecked(spec: &ModelSpec, theta: &[f64], batch: &[Example], reg_weight: f64) -> f64 {
    let data = if batch.is_empty() {
        0.0
    } else {
        batch
            .iter()
            .map(|ex| cross_entropy(&forward_pass(spec, theta, &ex.features, None).probs, ex.class))
            .sum::<f64>()
            / batch.len() as f64
    };
    data + reg_weight * theta.iter().map(|v| v * v).sum::<f64>()
}

/// Analytic gradient of [`empirical_risk`] by backpropagation.
pub fn gradient(
    spec: &ModelSpec,
    params: &ParameterVector,
    batch: &[Example],
    reg_weight: f64,
) -> Result<ParameterVector, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    spec.check_params(params)?;
    check_batch(spec, batch)?;
    ParameterVector::new(backprop(spec, params.as_slice(), batch, None, reg_weight))
}

/// Backpropagation over `batch`, optionally with one dropout mask per example.
///
/// The data term of a sample whose true-class probability sits below the
/// floor is constant in θ and contributes nothing.
pub(crate) fn backprop(
    spec: &ModelSpec,
    theta: &[f64],
    batch: &[Example],
    masks: Option<&[Vec<f64>]>,
    reg_weight: f64,
) -> Vec<f64> {
    let (d, h, k) = (spec.input_dim, spec.hidden_dim, spec.num_classes);
    let lay = spec.layout();
    let w2 = &theta[lay.w2..lay.b2];
    let mut grad = vec![0.0; lay.end];
    let inv_n = 1.0 / batch.len() as f64;
    let mut dlogits = vec![0.0; k];
    let mut dpre = vec![0.0; h];

    for (idx, ex) in batch.iter().enumerate() {
        let mask = masks.map(|m| m[idx].as_slice());
        let act = forward_pass(spec, theta, &ex.features, mask);
        if act.probs[ex.class] < PROB_FLOOR {
            continue;
        }
        for (c, d) in dlogits.iter_mut().enumerate() {
            let target = if c == ex.class { 1.0 } else { 0.0 };
            *d = (act.probs[c] - target) * inv_n;
        }
        for (c, &g) in dlogits.iter().enumerate() {
            let row = &mut grad[lay.w2 + c * h..lay.w2 + (c + 1) * h];
            for (gw, a) in row.iter_mut().zip(&act.hidden) {
                *gw += g * a;
            }
            grad[lay.b2 + c] += g;
        }
        for j in 0..h {
            if act.pre[j] <= 0.0 {
                dpre[j] = 0.0;
                continue;
            }
            let mut s = 0.0;
            for c in 0..k {
                s += w2[c * h + j] * dlogits[c];
            }
            dpre[j] = match mask {
                Some(m) => s * m[j],
                None => s,
            };
        }
        for j in 0..h {
            let g = dpre[j];
            if g == 0.0 {
                continue;
            }
            let row = &mut grad[lay.w1 + j * d..lay.w1 + (j + 1) * d];
            for (gw, xi) in row.iter_mut().zip(&ex.features) {
                *gw += g * xi;
            }
            grad[lay.b1 + j] += g;
        }
    }
    if reg_weight != 0.0 {
        for (g, t) in grad.iter_mut().zip(theta) {
            *g += 2.0 * reg_weight * t;
        }
    }
    grad
}

/// Central differences `(J(θ+εe_i) − J(θ−εe_i)) / 2ε` of the objective with
/// dropout off. An empty batch differentiates the regularizer alone.
pub fn finite_difference_gradient(
    spec: &ModelSpec,
    params: &ParameterVector,
    batch: &[Example],
    reg_weight: f64,
    eps: f64,
) -> Result<ParameterVector, ModelError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(ModelError::InvalidStep(eps));
    }
    spec.check_params(params)?;
    check_batch(spec, batch)?;
    let mut theta = params.as_slice().to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + eps;
        let plus = objective_unchecked(spec, &theta, batch, reg_weight);
        theta[i] = orig - eps;
        let minus = objective_unchecked(spec, &theta, batch, reg_weight);
        theta[i] = orig;
        out.push((plus - minus) / (2.0 * eps));
    }
    ParameterVector::new(out)
}
