use super::{BackboneBatch, BackboneGrads};
use crate::error::{Error, Result};
use crate::grad::sigmoid;

/// `σ(alphaᵀbeta − disc)`.
pub fn mirt_forward(alpha: &[f64], beta: &[f64], disc: f64) -> Result<f64> {
    if alpha.len() != beta.len() {
        return Err(Error::Shape(format!(
            "ability has {} dimensions, difficulty has {}",
            alpha.len(),
            beta.len()
        )));
    }
    Ok(sigmoid(dot(alpha, beta) - disc))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(super) fn logits(batch: &BackboneBatch, dim: usize) -> Vec<f64> {
    (0..batch.n)
        .map(|i| {
            let r = i * dim..(i + 1) * dim;
            dot(&batch.alpha[r.clone()], &batch.beta[r]) - batch.disc[i]
        })
        .collect()
}

pub(super) fn backward(batch: &BackboneBatch, dim: usize, dlogits: &[f64]) -> BackboneGrads {
    let mut alpha = vec![0.0; batch.n * dim];
    let mut beta = vec![0.0; batch.n * dim];
    let mut disc = vec![0.0; batch.n];
    for i in 0..batch.n {
        let g = dlogits[i];
        for k in i * dim..(i + 1) * dim {
            alpha[k] = g * batch.beta[k];
            beta[k] = g * batch.alpha[k];
        }
        disc[i] = -g;
    }
    BackboneGrads { alpha, beta, disc }
}
