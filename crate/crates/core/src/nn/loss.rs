use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Softmax cross-entropy over class logits; the target is a class index.
    CrossEntropy,
    /// `0.5 * sum (p - y)^2` over a single output.
    Mse,
}

/// Loss value and gradient with respect to the prediction.
pub fn evaluate(kind: LossKind, pred: &[f64], y: f64) -> Result<(f64, Vec<f64>)> {
    let (loss, grad) = match kind {
        LossKind::CrossEntropy => {
            let class = class_index(y, pred.len())?;
            let probs = softmax(pred);
            let loss = -probs[class].max(f64::MIN_POSITIVE).ln();
            let mut grad = probs;
            grad[class] -= 1.0;
            (loss, grad)
        }
        LossKind::Mse => {
            if pred.len() != 1 {
                return Err(Error::shape("a scalar prediction", pred.len()));
            }
            let r = pred[0] - y;
            (0.5 * r * r, vec![r])
        }
    };
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("loss is {loss}")));
    }
    Ok((loss, grad))
}

pub fn class_index(y: f64, classes: usize) -> Result<usize> {
    if y < 0.0 || y.fract() != 0.0 || y as usize >= classes {
        return Err(Error::Data(format!("label {y} is not a class in 0..{classes}")));
    }
    Ok(y as usize)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest logit (first on ties).
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_zero_at_target() {
        let (l, g) = evaluate(LossKind::Mse, &[2.5], 2.5).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn cross_entropy_gradient_is_probs_minus_onehot() {
        let (l, g) = evaluate(LossKind::CrossEntropy, &[0.0, 0.0], 1.0).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        assert_eq!(g, vec![0.5, -0.5]);
        assert!(evaluate(LossKind::CrossEntropy, &[1000.0, -1000.0], 0.0).unwrap().0.abs() < 1e-12);
        assert!(matches!(evaluate(LossKind::CrossEntropy, &[0.0, 0.0], 2.0), Err(Error::Data(_))));
    }

    #[test]
    fn argmax_first_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}
