use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use super::dense::{sigmoid_inplace, DenseLayer, DenseParams};
use super::{check_qrow, clamp_positive, BackboneBatch, BackboneConfig, BackboneGrads};
use crate::error::{Error, Result};
use crate::grad::{sigmoid, ParamGroup, ParameterStore};

const TAGS: [&str; 3] = ["ncdm.f3", "ncdm.f2", "ncdm.f1"];

/// Single-sample NCDM. `mlp` holds the layers in application order
/// (`f3`, `f2`, `f1`); the two hidden layers use sigmoid activations.
pub fn ncdm_forward(mastery: &[f64], diff: &[f64], disc: f64, qrow: &[f64], mlp: &[DenseLayer]) -> Result<f64> {
    let k = qrow.len();
    if mastery.len() != k || diff.len() != k {
        return Err(Error::Shape(format!(
            "mastery {} / difficulty {} / Q row {} lengths differ",
            mastery.len(),
            diff.len(),
            k
        )));
    }
    if mlp.len() != 3 || mlp[0].inputs() != k || mlp[2].outputs() != 1 {
        return Err(Error::Shape("NCDM expects three layers mapping K → … → 1".into()));
    }
    check_qrow(qrow)?;
    let x: Vec<f64> = (0..k).map(|c| qrow[c] * (mastery[c] - diff[c]) * disc).collect();
    let h3: Vec<f64> = mlp[0].apply(&x).into_iter().map(sigmoid).collect();
    let h2: Vec<f64> = mlp[1].apply(&h3).into_iter().map(sigmoid).collect();
    Ok(sigmoid(mlp[2].apply(&h2)[0]))
}

pub(crate) struct Cache {
    x: Array2<f64>,
    h3: Array2<f64>,
    h2: Array2<f64>,
    mastery: Vec<f64>,
    diff: Vec<f64>,
    disc: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct NcdmParams {
    layers: [DenseParams; 3],
}

impl NcdmParams {
    pub fn build<R: Rng>(config: &BackboneConfig, store: &mut ParameterStore, rng: &mut R) -> Self {
        let widths = [config.concepts, config.hidden[0], config.hidden[1], 1];
        let layers = std::array::from_fn(|i| {
            let mut layer = DenseLayer::random(widths[i], widths[i + 1], rng);
            clamp_positive(layer.weight.as_slice_mut().expect("contiguous"));
            if i > 0 {
                // inputs are sigmoid outputs centred on 0.5; start pre-activations near zero
                layer.bias = layer.weight.sum_axis(Axis(1)) * -0.5;
            }
            DenseParams::register(store, TAGS[i], layer, ParamGroup::Backbone)
        });
        Self { layers }
    }

    pub fn attach(config: &BackboneConfig, store: &ParameterStore) -> Result<Self> {
        let widths = [config.concepts, config.hidden[0], config.hidden[1], 1];
        let f3 = DenseParams::attach(store, TAGS[0], widths[0], widths[1])?;
        let f2 = DenseParams::attach(store, TAGS[1], widths[1], widths[2])?;
        let f1 = DenseParams::attach(store, TAGS[2], widths[2], widths[3])?;
        Ok(Self { layers: [f3, f2, f1] })
    }

    pub fn layers(&self, store: &ParameterStore) -> Vec<DenseLayer> {
        self.layers.iter().map(|p| p.to_layer(store)).collect()
    }

    pub fn clamp_weights(&self, store: &mut ParameterStore) {
        for p in &self.layers {
            clamp_positive(&mut store.get_mut(p.weight).values);
        }
    }

    pub fn forward(&self, store: &ParameterStore, batch: &BackboneBatch, k: usize) -> (Vec<f64>, Cache) {
        let n = batch.n;
        let mastery: Vec<f64> = batch.alpha.iter().map(|&a| sigmoid(a)).collect();
        let diff: Vec<f64> = batch.beta.iter().map(|&b| sigmoid(b)).collect();
        let disc: Vec<f64> = batch.disc.iter().map(|&d| sigmoid(d)).collect();
        let x = Array2::from_shape_fn((n, k), |(i, c)| {
            let j = i * k + c;
            batch.qrows[j] * (mastery[j] - diff[j]) * disc[i]
        });
        let mut h3 = self.layers[0].view(store).affine(x.view());
        sigmoid_inplace(&mut h3);
        let mut h2 = self.layers[1].view(store).affine(h3.view());
        sigmoid_inplace(&mut h2);
        let z = self.layers[2].view(store).affine(h2.view());
        let logits = z.column(0).to_vec();
        (
            logits,
            Cache {
                x,
                h3,
                h2,
                mastery,
                diff,
                disc,
            },
        )
    }

    pub fn backward(
        &self,
        store: &mut ParameterStore,
        batch: &BackboneBatch,
        k: usize,
        cache: Cache,
        dlogits: &[f64],
    ) -> BackboneGrads {
        let n = batch.n;
        let dz = Array2::from_shape_vec((n, 1), dlogits.to_vec()).expect("one logit per row");
        self.layers[2].accumulate(store, cache.h2.view(), dz.view());
        let dh2 = dz.dot(&self.layers[2].view(store).w);
        let dz2 = through_sigmoid(dh2, cache.h2.view());
        self.layers[1].accumulate(store, cache.h3.view(), dz2.view());
        let dh3 = dz2.dot(&self.layers[1].view(store).w);
        let dz3 = through_sigmoid(dh3, cache.h3.view());
        self.layers[0].accumulate(store, cache.x.view(), dz3.view());
        let dx = dz3.dot(&self.layers[0].view(store).w);

        let mut g = BackboneGrads {
            alpha: vec![0.0; n * k],
            beta: vec![0.0; n * k],
            disc: vec![0.0; n],
        };
        for i in 0..n {
            let mut d_disc = 0.0;
            for c in 0..k {
                let j = i * k + c;
                let gx = dx[(i, c)] * batch.qrows[j];
                let (m, df) = (cache.mastery[j], cache.diff[j]);
                g.alpha[j] = gx * cache.disc[i] * m * (1.0 - m);
                g.beta[j] = -gx * cache.disc[i] * df * (1.0 - df);
                d_disc += gx * (m - df);
            }
            g.disc[i] = d_disc * cache.disc[i] * (1.0 - cache.disc[i]);
        }
        g
    }
}

fn through_sigmoid(mut upstream: Array2<f64>, act: ArrayView2<'_, f64>) -> Array2<f64> {
    Zip::from(&mut upstream).and(act).for_each(|g, &a| *g *= a * (1.0 - a));
    upstream
}
