use serde::{Deserialize, Serialize};

use super::ParameterStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of every trainable tensor.
///
/// Lookup tables (`sparse_rows`) only touch rows that received gradient in
/// this step, so an entity's embedding moves only when its own records are
/// in the batch. Non-finite gradients abort the step before anything moves.
pub fn adam_step(store: &mut ParameterStore, cfg: &AdamConfig) -> Result<()> {
    if let Some(t) = store
        .iter()
        .find(|t| t.trainable && t.grad.iter().any(|g| !g.is_finite()))
    {
        return Err(Error::NonFinite(t.tag.clone()));
    }
    let step = store.step() + 1;
    store.set_step(step);
    let bias1 = 1.0 - cfg.beta1.powi(step as i32);
    let bias2 = 1.0 - cfg.beta2.powi(step as i32);

    for t in store.iter_mut().filter(|t| t.trainable) {
        let width = if t.sparse_rows { t.row_width().max(1) } else { t.len().max(1) };
        for start in (0..t.len()).step_by(width) {
            let end = start + width;
            if t.sparse_rows && t.grad[start..end].iter().all(|&g| g == 0.0) {
                continue;
            }
            for i in start..end {
                let g = t.grad[i];
                t.m[i] = cfg.beta1 * t.m[i] + (1.0 - cfg.beta1) * g;
                t.v[i] = cfg.beta2 * t.v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = t.m[i] / bias1;
                let v_hat = t.v[i] / bias2;
                t.values[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        if t.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(t.tag.clone()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::{ParamGroup, ParamTensor};

    fn scalar(w: f64) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.add(ParamTensor::new("w", vec![1], vec![w], ParamGroup::Backbone).unwrap())
            .unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = scalar(0.0);
        s.by_tag_mut("w").unwrap().grad[0] = 1.0;
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        adam_step(&mut s, &cfg).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps)
        let expected = -0.01 / (1.0 + 1e-8);
        assert!((s.by_tag("w").unwrap().values[0] - expected).abs() < 1e-15);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn zero_gradients_are_a_fixed_point() {
        let mut s = scalar(0.7);
        adam_step(&mut s, &AdamConfig::default()).unwrap();
        assert_eq!(s.by_tag("w").unwrap().values[0], 0.7);
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut s = scalar(0.0);
        s.by_tag_mut("w").unwrap().grad[0] = f64::NAN;
        match adam_step(&mut s, &AdamConfig::default()) {
            Err(Error::NonFinite(tag)) => assert_eq!(tag, "w"),
            other => panic!("{other:?}"),
        }
        assert_eq!(s.by_tag("w").unwrap().values[0], 0.0);
    }

    #[test]
    fn sparse_tables_skip_untouched_rows() {
        let mut s = ParameterStore::new();
        let t = ParamTensor::new("emb", vec![2, 2], vec![1.0; 4], ParamGroup::Embedding)
            .unwrap()
            .table(vec!["a".into(), "b".into()]);
        s.add(t).unwrap();
        let t = s.by_tag_mut("emb").unwrap();
        t.grad[0] = 1.0;
        t.grad[1] = 1.0;
        adam_step(&mut s, &AdamConfig::default()).unwrap();
        // row b keeps stale momentum at zero and does not move on the next step either
        s.zero_grad();
        s.by_tag_mut("emb").unwrap().grad[0] = 0.5;
        adam_step(&mut s, &AdamConfig::default()).unwrap();
        let v = &s.by_tag("emb").unwrap().values;
        assert!(v[0] < 1.0 && v[1] < 1.0);
        assert_eq!(&v[2..], &[1.0, 1.0]);
    }

    #[test]
    fn frozen_tensors_do_not_move() {
        let mut s = scalar(0.0);
        s.set_trainable(ParamGroup::Backbone, false);
        s.by_tag_mut("w").unwrap().grad[0] = 1.0;
        adam_step(&mut s, &AdamConfig::default()).unwrap();
        assert_eq!(s.by_tag("w").unwrap().values[0], 0.0);
    }
}
