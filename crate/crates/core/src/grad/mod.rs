//! Parameter storage, the binary cross-entropy loss, Adam, and the
//! forward/backward contract every model in the crate implements.
//!
//! Gradients are derived by hand for each layer; the finite-difference suite
//! in the integration tests is what keeps them honest.

mod adam;
mod param;

pub use adam::{adam_step, AdamConfig};
pub use param::{ParamGroup, ParamId, ParamTensor, ParameterStore};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Mean binary cross-entropy of a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub batch_size: usize,
}

pub fn bce_loss(preds: &[f64], labels: &[f64]) -> Result<LossValue> {
    if preds.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Ok(LossValue {
            value: 0.0,
            batch_size: 0,
        });
    }
    let total: f64 = preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(LossValue {
        value: total / preds.len() as f64,
        batch_size: preds.len(),
    })
}

/// ∂(mean BCE)/∂logit for each item: `(p − y) / B`.
pub fn bce_logit_grad(probs: &[f64], labels: &[f64]) -> Vec<f64> {
    let b = probs.len().max(1) as f64;
    probs.iter().zip(labels).map(|(p, y)| (p - y) / b).collect()
}

/// A model whose scalar outputs pass through a final sigmoid.
pub trait Differentiable {
    type Batch: ?Sized;
    type Cache;

    fn params(&self) -> &ParameterStore;
    fn params_mut(&mut self) -> &mut ParameterStore;

    /// Pre-sigmoid outputs for the batch, plus whatever backward needs.
    fn forward(&self, batch: &Self::Batch) -> Result<(Vec<f64>, Self::Cache)>;

    /// Accumulates parameter gradients given ∂loss/∂logit per item.
    fn backward(&mut self, cache: Self::Cache, dlogits: &[f64]) -> Result<()>;

    /// Hook run after every optimizer step (e.g. weight clamping).
    fn after_step(&mut self) {}
}

struct Pending<C> {
    cache: C,
    dlogits: Vec<f64>,
    loss: LossValue,
}

/// Pairs each backward pass with the forward pass that recorded it.
pub struct Session<C> {
    pending: Option<Pending<C>>,
}

impl<C> Default for Session<C> {
    fn default() -> Self {
        Self { pending: None }
    }
}

impl<C> Session<C> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward<M>(&mut self, model: &M, batch: &M::Batch, labels: &[f64]) -> Result<LossValue>
    where
        M: Differentiable<Cache = C>,
    {
        let (logits, cache) = model.forward(batch)?;
        let probs: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
        let loss = bce_loss(&probs, labels)?;
        self.pending = Some(Pending {
            cache,
            dlogits: bce_logit_grad(&probs, labels),
            loss,
        });
        Ok(loss)
    }

    /// Overwrites every gradient with ∂loss/∂param for the recorded batch;
    /// tensors off the active path end up zero.
    pub fn backward<M>(&mut self, model: &mut M, loss: &LossValue) -> Result<()>
    where
        M: Differentiable<Cache = C>,
    {
        let pending = self
            .pending
            .take()
            .ok_or_else(|| Error::State("backward called without a recorded forward pass".into()))?;
        if pending.loss != *loss {
            return Err(Error::State("loss does not belong to the recorded forward pass".into()));
        }
        model.params_mut().zero_grad();
        model.backward(pending.cache, &pending.dlogits)
    }
}

/// Loss of a batch without recording anything.
pub fn evaluate_loss<M: Differentiable>(model: &M, batch: &M::Batch, labels: &[f64]) -> Result<f64> {
    let (logits, _) = model.forward(batch)?;
    let probs: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    Ok(bce_loss(&probs, labels)?.value)
}

/// Forward, backward, one Adam step, then the model's post-step hook.
pub fn train_step<M: Differentiable>(model: &mut M, batch: &M::Batch, labels: &[f64], adam: &AdamConfig) -> Result<LossValue> {
    let mut session = Session::new();
    let loss = session.forward(model, batch, labels)?;
    session.backward(model, &loss)?;
    adam_step(model.params_mut(), adam)?;
    model.after_step();
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// y = σ(w): one scalar parameter, no input.
    struct Unit {
        store: ParameterStore,
        id: ParamId,
        constant: bool,
    }

    impl Unit {
        fn new(w: f64, constant: bool) -> Self {
            let mut store = ParameterStore::new();
            let id = store
                .add(ParamTensor::new("w", vec![1], vec![w], ParamGroup::Backbone).unwrap())
                .unwrap();
            Self { store, id, constant }
        }
    }

    impl Differentiable for Unit {
        type Batch = usize;
        type Cache = usize;

        fn params(&self) -> &ParameterStore {
            &self.store
        }

        fn params_mut(&mut self) -> &mut ParameterStore {
            &mut self.store
        }

        fn forward(&self, batch: &usize) -> Result<(Vec<f64>, usize)> {
            let z = if self.constant { 0.3 } else { self.store.values(self.id)[0] };
            Ok((vec![z; *batch], *batch))
        }

        fn backward(&mut self, _cache: usize, dlogits: &[f64]) -> Result<()> {
            if !self.constant {
                self.store.grad_mut(self.id)[0] += dlogits.iter().sum::<f64>();
            }
            Ok(())
        }
    }

    #[test]
    fn bce_reference_values() {
        let perfect = bce_loss(&[1.0 - BCE_EPS], &[1.0]).unwrap();
        assert!(perfect.value < 1e-6);
        for y in [0.0, 1.0] {
            let half = bce_loss(&[0.5], &[y]).unwrap();
            assert!((half.value - std::f64::consts::LN_2).abs() < 1e-15);
        }
        let worst = bce_loss(&[BCE_EPS], &[1.0]).unwrap();
        assert!((worst.value - 16.118_095_650_958_317).abs() < 1e-9, "{}", worst.value);
        // clamping keeps exact zero and one finite
        assert!(bce_loss(&[0.0, 1.0], &[1.0, 0.0]).unwrap().value.is_finite());
    }

    #[test]
    fn logit_gradient_is_p_minus_y() {
        for &(z, y) in &[(0.3, 1.0), (-2.0, 0.0), (4.0, 1.0), (0.0, 0.0)] {
            let p = sigmoid(z);
            let g = bce_logit_grad(&[p], &[y])[0];
            assert!((g - (p - y)).abs() < 1e-10);
            // closed-form derivative of -[y ln σ(z) + (1-y) ln(1-σ(z))]
            let closed = -y * (1.0 - p) + (1.0 - y) * p;
            assert!((g - closed).abs() < 1e-10);
        }
    }

    #[test]
    fn single_sigmoid_unit_gradient() {
        let mut unit = Unit::new(0.0, false);
        let mut s = Session::new();
        let loss = s.forward(&unit, &1, &[1.0]).unwrap();
        s.backward(&mut unit, &loss).unwrap();
        assert!((unit.store.by_tag("w").unwrap().grad[0] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_model_has_zero_gradients() {
        let mut unit = Unit::new(2.0, true);
        unit.store.grad_mut(unit.id)[0] = 7.0;
        let mut s = Session::new();
        let loss = s.forward(&unit, &4, &[1.0, 0.0, 1.0, 1.0]).unwrap();
        s.backward(&mut unit, &loss).unwrap();
        assert_eq!(unit.store.by_tag("w").unwrap().grad[0], 0.0);
    }

    #[test]
    fn backward_without_forward_is_a_state_error() {
        let mut unit = Unit::new(0.0, false);
        let mut s: Session<usize> = Session::new();
        let loss = LossValue {
            value: 0.1,
            batch_size: 1,
        };
        assert!(matches!(s.backward(&mut unit, &loss), Err(Error::State(_))));
        // a consumed forward cannot be replayed
        let loss = s.forward(&unit, &1, &[1.0]).unwrap();
        s.backward(&mut unit, &loss).unwrap();
        assert!(matches!(s.backward(&mut unit, &loss), Err(Error::State(_))));
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(100.0), 100.0);
    }
}
