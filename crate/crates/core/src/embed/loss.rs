//! Training objectives, kept here so the sidecar's values can be checked
//! against a reference on identical inputs.

use super::{cosine, dot, norm, EmbeddingVector};
use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]` before logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Default label-smoothing factor.
pub const DEFAULT_ETA: f64 = 0.1;

/// Default InfoNCE temperature.
pub const DEFAULT_TAU: f64 = 0.1;

/// Smoothed masked-entity loss over a batch of `(distribution, target)`:
///
/// `-(1/N) Σ_i Σ_j [ y_ij (1-η) log p_ij + (1 - y_ij) η log(1 - p_ij) ]`
///
/// with `y_i` one-hot on the target. This is the per-vocabulary binary form,
/// not the usual `(1-η) y + η/V` smoothed cross-entropy.
pub fn masked_entity_loss(batch: &[(Vec<f64>, usize)], eta: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::invalid(format!("eta {eta} outside [0, 1)")));
    }
    let mut total = 0.0;
    for (i, (pred, target)) in batch.iter().enumerate() {
        if *target >= pred.len() {
            return Err(Error::invalid(format!(
                "target {target} out of range for distribution of size {} (row {i})",
                pred.len()
            )));
        }
        if pred.iter().any(|p| !p.is_finite() || !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid(format!("row {i} has entries outside [0, 1]")));
        }
        let sum: f64 = pred.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("row {i} sums to {sum}, not 1")));
        }
        for (j, &p) in pred.iter().enumerate() {
            let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            total += if j == *target {
                (1.0 - eta) * p.ln()
            } else {
                eta * (1.0 - p).ln()
            };
        }
    }
    Ok(-total / batch.len() as f64)
}

/// InfoNCE with cosine similarity:
/// `-log( e^{s(a,p)/τ} / (e^{s(a,p)/τ} + Σ_k e^{s(a,n_k)/τ}) )`.
pub fn infonce_loss(
    anchor: &EmbeddingVector,
    positive: &EmbeddingVector,
    negatives: &[EmbeddingVector],
    tau: f64,
) -> Result<f64> {
    infonce_loss_and_grad(anchor, positive, negatives, tau).map(|(l, _)| l)
}

/// InfoNCE loss and its gradient with respect to the anchor.
pub fn infonce_loss_and_grad(
    anchor: &EmbeddingVector,
    positive: &EmbeddingVector,
    negatives: &[EmbeddingVector],
    tau: f64,
) -> Result<(f64, Vec<f64>)> {
    if negatives.is_empty() {
        return Err(Error::invalid("InfoNCE needs at least one negative"));
    }
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::invalid(format!("temperature {tau} must be positive")));
    }
    let others: Vec<&EmbeddingVector> = std::iter::once(positive).chain(negatives).collect();
    let logits: Vec<f64> = others
        .iter()
        .map(|v| cosine(&anchor.0, &v.0).map(|s| s / tau))
        .collect::<Result<_>>()?;

    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = max + z.ln() - logits[0];

    // d cos(a, v) / da = v / (|a||v|) - cos(a, v) a / |a|^2
    let na = norm(&anchor.0);
    let mut grad = vec![0.0; anchor.dim()];
    for (j, v) in others.iter().enumerate() {
        let weight = exps[j] / z - if j == 0 { 1.0 } else { 0.0 };
        let nv = norm(&v.0);
        let cos = dot(&anchor.0, &v.0) / (na * nv);
        for (g, (a, x)) in grad.iter_mut().zip(anchor.0.iter().zip(&v.0)) {
            *g += weight / tau * (x / (na * nv) - cos * a / (na * na));
        }
    }
    Ok((loss, grad))
}
