use super::{BackboneBatch, BackboneGrads};
use crate::grad::{sigmoid, softplus};

/// Logistic scaling constant that makes the logistic curve track the normal ogive.
pub const IRT_SCALE: f64 = 1.702;

/// `σ(c · disc · (alpha − beta))`.
pub fn irt_forward(alpha: f64, beta: f64, disc: f64, c: f64) -> f64 {
    sigmoid(c * disc * (alpha - beta))
}

// Inside the model the raw discrimination goes through softplus so it stays positive.
pub(super) fn logits(batch: &BackboneBatch) -> Vec<f64> {
    (0..batch.n)
        .map(|i| IRT_SCALE * softplus(batch.disc[i]) * (batch.alpha[i] - batch.beta[i]))
        .collect()
}

pub(super) fn backward(batch: &BackboneBatch, dlogits: &[f64]) -> BackboneGrads {
    let mut g = BackboneGrads {
        alpha: vec![0.0; batch.n],
        beta: vec![0.0; batch.n],
        disc: vec![0.0; batch.n],
    };
    for i in 0..batch.n {
        let s = softplus(batch.disc[i]);
        let gap = batch.alpha[i] - batch.beta[i];
        g.alpha[i] = dlogits[i] * IRT_SCALE * s;
        g.beta[i] = -g.alpha[i];
        g.disc[i] = dlogits[i] * IRT_SCALE * gap * sigmoid(batch.disc[i]);
    }
    g
}
