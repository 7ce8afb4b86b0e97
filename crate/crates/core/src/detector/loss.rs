//! Focal classification loss and smooth-L1 box regression, as value plus
//! gradient with respect to the raw predictions.

use crate::error::{Error, Result};
use crate::nn::ops::{sigmoid, softplus};

use super::matching::AnchorLabel;

/// Per-element focal term `-a_t (1 - p_t)^g ln p_t` and its derivative with
/// respect to the logit. `target` is 0 or 1.
pub fn focal_term(logit: f64, target: bool, alpha: f64, gamma: f64) -> (f64, f64) {
    let (z, sign, alpha_t) = if target { (logit, 1.0, alpha) } else { (-logit, -1.0, 1.0 - alpha) };
    let q = sigmoid(z);
    let one_minus_q = sigmoid(-z);
    let ln_q = -softplus(-z);
    let mod_factor = if gamma == 0.0 { 1.0 } else { one_minus_q.powf(gamma) };
    let value = -alpha_t * mod_factor * ln_q;
    let grad = sign * alpha_t * (gamma * mod_factor * q * ln_q - mod_factor * one_minus_q);
    (value, grad)
}

/// Sigmoid binary cross-entropy of one logit.
pub fn sigmoid_bce(logit: f64, target: bool) -> f64 {
    if target {
        softplus(-logit)
    } else {
        softplus(logit)
    }
}

/// Focal loss over an `anchors x classes` logit table, normalised by
/// `max(1, positives)`. Ignored anchors contribute nothing.
pub fn focal_loss(
    logits: &[f64],
    num_classes: usize,
    labels: &[AnchorLabel],
    gt_classes: &[usize],
    alpha: f64,
    gamma: f64,
) -> Result<(f64, Vec<f64>)> {
    if logits.len() != labels.len() * num_classes {
        return Err(Error::Contract(format!("{} logits for {} anchors x {num_classes} classes", logits.len(), labels.len())));
    }
    let n_pos = labels.iter().filter(|l| matches!(l, AnchorLabel::Positive(_))).count();
    let norm = 1.0 / n_pos.max(1) as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (a, label) in labels.iter().enumerate() {
        let target_class = match *label {
            AnchorLabel::Ignore => continue,
            AnchorLabel::Negative => None,
            AnchorLabel::Positive(g) => Some(gt_classes[g]),
        };
        for k in 0..num_classes {
            let i = a * num_classes + k;
            let (v, d) = focal_term(logits[i], target_class == Some(k), alpha, gamma);
            total += v;
            grad[i] = d * norm;
        }
    }
    let value = total * norm;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("focal loss evaluated to {value}")));
    }
    Ok((value, grad))
}

/// `0.5 d^2 / beta` inside the knee, `|d| - 0.5 beta` outside, with its derivative.
pub fn smooth_l1_term(d: f64, beta: f64) -> (f64, f64) {
    if d.abs() < beta {
        (0.5 * d * d / beta, d / beta)
    } else {
        (d.abs() - 0.5 * beta, d.signum())
    }
}

/// Smooth-L1 between predicted and target offsets of the positive anchors,
/// summed over coordinates and divided by `max(1, positives)`.
/// `targets[a]` is only read for positive anchors.
pub fn smooth_l1(pred: &[f64], targets: &[[f64; 4]], labels: &[AnchorLabel], beta: f64) -> Result<(f64, Vec<f64>)> {
    if pred.len() != labels.len() * 4 || targets.len() != labels.len() {
        return Err(Error::Contract(format!("{} offsets / {} targets for {} anchors", pred.len(), targets.len(), labels.len())));
    }
    let n_pos = labels.iter().filter(|l| matches!(l, AnchorLabel::Positive(_))).count();
    let norm = 1.0 / n_pos.max(1) as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for (a, label) in labels.iter().enumerate() {
        if !matches!(label, AnchorLabel::Positive(_)) {
            continue;
        }
        for c in 0..4 {
            let (v, d) = smooth_l1_term(pred[a * 4 + c] - targets[a][c], beta);
            total += v;
            grad[a * 4 + c] = d * norm;
        }
    }
    let value = total * norm;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("box loss evaluated to {value}")));
    }
    Ok((value, grad))
}
