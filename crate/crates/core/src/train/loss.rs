//! Class-weighted binary cross-entropy on logits.

use crate::error::{Error, Result};
use crate::model::layers::sigmoid;

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `−[w·y·log σ(z) + (1−y)·log(1−σ(z))]`, evaluated as
/// `(1−y)·z + (1 + (w−1)·y)·softplus(−z)`.
pub fn bce_with_logits(logit: f64, label: bool, pos_weight: f64) -> f64 {
    if label {
        pos_weight * softplus(-logit)
    } else {
        // z + softplus(-z) == softplus(z)
        softplus(logit)
    }
}

/// `∂ bce_with_logits / ∂z`
pub fn bce_with_logits_grad(logit: f64, label: bool, pos_weight: f64) -> f64 {
    if label {
        -pos_weight * (1.0 - sigmoid(logit))
    } else {
        sigmoid(logit)
    }
}

/// `N_negative / N_positive` over the training labels.
pub fn auto_pos_weight(labels: impl IntoIterator<Item = bool>) -> Result<f64> {
    let (mut pos, mut neg) = (0usize, 0usize);
    for l in labels {
        if l {
            pos += 1;
        } else {
            neg += 1;
        }
    }
    if pos == 0 || neg == 0 {
        return Err(Error::Config(format!(
            "class weighting needs both classes in the training split ({pos} positive, {neg} negative)"
        )));
    }
    Ok(neg as f64 / pos as f64)
}
