use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::grad::{sigmoid, ParamGroup, ParamId, ParamTensor, ParameterStore};

/// Fully connected layer `y = W x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>) -> Self {
        assert_eq!(weight.nrows(), bias.len(), "bias length must equal output width");
        Self { weight, bias }
    }

    pub fn random<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let std = (2.0 / (inputs + outputs) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let weight = Array2::from_shape_fn((outputs, inputs), |_| normal.sample(rng));
        Self {
            weight,
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let x = ArrayView1::from(x);
        (self.weight.dot(&x) + &self.bias).to_vec()
    }
}

#[derive(Clone, Copy)]
pub(crate) struct LayerView<'a> {
    pub w: ArrayView2<'a, f64>,
    pub b: ArrayView1<'a, f64>,
}

impl<'a> LayerView<'a> {
    /// Rows of `x` are samples.
    pub fn affine(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + self.b
    }
}

/// Handles of a dense layer's weight and bias inside a [`ParameterStore`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct DenseParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl DenseParams {
    pub fn register(store: &mut ParameterStore, prefix: &str, layer: DenseLayer, group: ParamGroup) -> Self {
        let (outputs, inputs) = layer.weight.dim();
        let weight = store.upsert(
            ParamTensor::new(
                format!("{prefix}.weight"),
                vec![outputs, inputs],
                layer.weight.iter().copied().collect(),
                group,
            )
            .expect("consistent shape"),
        );
        let bias = store.upsert(
            ParamTensor::new(format!("{prefix}.bias"), vec![outputs], layer.bias.to_vec(), group)
                .expect("consistent shape"),
        );
        Self {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn attach(store: &ParameterStore, prefix: &str, inputs: usize, outputs: usize) -> crate::Result<Self> {
        let weight = store.id(&format!("{prefix}.weight"))?;
        let bias = store.id(&format!("{prefix}.bias"))?;
        if store.get(weight).shape != [outputs, inputs] || store.get(bias).shape != [outputs] {
            return Err(crate::Error::Checkpoint(format!(
                "`{prefix}` has shape {:?}, expected [{outputs}, {inputs}]",
                store.get(weight).shape
            )));
        }
        Ok(Self {
            weight,
            bias,
            inputs,
            outputs,
        })
    }

    pub fn view<'a>(&self, store: &'a ParameterStore) -> LayerView<'a> {
        LayerView {
            w: ArrayView2::from_shape((self.outputs, self.inputs), store.values(self.weight)).expect("registered shape"),
            b: ArrayView1::from(store.values(self.bias)),
        }
    }

    pub fn to_layer(self, store: &ParameterStore) -> DenseLayer {
        let v = self.view(store);
        DenseLayer::new(v.w.to_owned(), v.b.to_owned())
    }

    /// Given ∂L/∂z for `z = x Wᵀ + b`, accumulates ∂L/∂W and ∂L/∂b.
    pub fn accumulate(&self, store: &mut ParameterStore, x: ArrayView2<'_, f64>, dz: ArrayView2<'_, f64>) {
        let dw = dz.t().dot(&x);
        for (g, d) in store.grad_mut(self.weight).iter_mut().zip(dw.iter()) {
            *g += d;
        }
        let db = dz.sum_axis(Axis(0));
        for (g, d) in store.grad_mut(self.bias).iter_mut().zip(db.iter()) {
            *g += d;
        }
    }
}

pub(crate) fn sigmoid_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(sigmoid);
}
