use ndarray::{s, Array2, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::dense::{sigmoid_inplace, DenseLayer, DenseParams};
use super::{check_qrow, BackboneBatch, BackboneConfig, BackboneGrads};
use crate::error::{Error, Result};
use crate::grad::{sigmoid, ParamGroup, ParamId, ParamTensor, ParameterStore};

const CONCEPT_TAG: &str = "kscd.concept_emb";

/// The three KSCD networks: `f_sk` and `f_ek` map `[x ∥ h_c]` (width `2d`) to
/// a hidden vector through a sigmoid, `f_se` maps the hidden gap to a scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct KscdNets {
    pub f_sk: DenseLayer,
    pub f_ek: DenseLayer,
    pub f_se: DenseLayer,
}

impl KscdNets {
    pub fn random<R: Rng>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            f_sk: DenseLayer::random(2 * dim, hidden, rng),
            f_ek: DenseLayer::random(2 * dim, hidden, rng),
            f_se: DenseLayer::random(hidden, 1, rng),
        }
    }

    fn project(layer: &DenseLayer, x: &[f64], h: &[f64]) -> Vec<f64> {
        let joined: Vec<f64> = x.iter().chain(h).copied().collect();
        layer.apply(&joined).into_iter().map(sigmoid).collect()
    }

    /// Per-concept proficiency vector `σ(f_sk(alpha ∥ h_c))`.
    pub fn proficiency(&self, alpha: &[f64], h_c: &[f64]) -> Vec<f64> {
        Self::project(&self.f_sk, alpha, h_c)
    }

    /// Per-concept difficulty vector `σ(f_ek(beta ∥ h_c))`.
    pub fn difficulty(&self, beta: &[f64], h_c: &[f64]) -> Vec<f64> {
        Self::project(&self.f_ek, beta, h_c)
    }

    /// `f_se(a − e)`, the pre-sigmoid contribution of one concept.
    pub fn interaction(&self, a: &[f64], e: &[f64]) -> f64 {
        let gap: Vec<f64> = a.iter().zip(e).map(|(x, y)| x - y).collect();
        self.f_se.apply(&gap)[0]
    }
}

/// Single-sample KSCD: the sigmoid of the mean `f_se` contribution over the
/// exercise's active concepts.
pub fn kscd_forward(alpha: &[f64], beta: &[f64], concept_embs: &[Vec<f64>], qrow: &[f64], nets: &KscdNets) -> Result<f64> {
    if alpha.len() != beta.len() || concept_embs.len() != qrow.len() {
        return Err(Error::Shape(format!(
            "ability {} / difficulty {} / {} concept embeddings for a Q row of {}",
            alpha.len(),
            beta.len(),
            concept_embs.len(),
            qrow.len()
        )));
    }
    let active = check_qrow(qrow)?;
    let mut total = 0.0;
    for (c, h) in concept_embs.iter().enumerate() {
        if qrow[c] == 0.0 {
            continue;
        }
        let a = nets.proficiency(alpha, h);
        let e = nets.difficulty(beta, h);
        total += qrow[c] * nets.interaction(&a, &e);
    }
    Ok(sigmoid(total / active as f64))
}

pub(crate) struct Cache {
    /// (sample, concept) for every active pair.
    pairs: Vec<(usize, usize)>,
    counts: Vec<f64>,
    xs: Array2<f64>,
    xe: Array2<f64>,
    a: Array2<f64>,
    e: Array2<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct KscdParams {
    concepts: ParamId,
    f_sk: DenseParams,
    f_ek: DenseParams,
    f_se: DenseParams,
    k: usize,
}

impl KscdParams {
    pub fn build<R: Rng>(config: &BackboneConfig, store: &mut ParameterStore, rng: &mut R) -> Self {
        let (k, d, h) = (config.concepts, config.latent_dim, config.hidden[0]);
        let normal = Normal::new(0.0, 0.1).expect("positive std");
        let values = (0..k * d).map(|_| normal.sample(rng)).collect();
        let concepts = store.upsert(ParamTensor::new(CONCEPT_TAG, vec![k, d], values, ParamGroup::Backbone).expect("shape"));
        let nets = KscdNets::random(d, h, rng);
        Self {
            concepts,
            f_sk: DenseParams::register(store, "kscd.f_sk", nets.f_sk, ParamGroup::Backbone),
            f_ek: DenseParams::register(store, "kscd.f_ek", nets.f_ek, ParamGroup::Backbone),
            f_se: DenseParams::register(store, "kscd.f_se", nets.f_se, ParamGroup::Backbone),
            k,
        }
    }

    pub fn attach(config: &BackboneConfig, store: &ParameterStore) -> Result<Self> {
        let (k, d, h) = (config.concepts, config.latent_dim, config.hidden[0]);
        let concepts = store.id(CONCEPT_TAG)?;
        if store.get(concepts).shape != [k, d] {
            return Err(Error::Checkpoint(format!(
                "`{CONCEPT_TAG}` has shape {:?}, expected [{k}, {d}]",
                store.get(concepts).shape
            )));
        }
        Ok(Self {
            concepts,
            f_sk: DenseParams::attach(store, "kscd.f_sk", 2 * d, h)?,
            f_ek: DenseParams::attach(store, "kscd.f_ek", 2 * d, h)?,
            f_se: DenseParams::attach(store, "kscd.f_se", h, 1)?,
            k,
        })
    }

    pub fn nets(&self, store: &ParameterStore) -> (KscdNets, Vec<Vec<f64>>) {
        let nets = KscdNets {
            f_sk: self.f_sk.to_layer(store),
            f_ek: self.f_ek.to_layer(store),
            f_se: self.f_se.to_layer(store),
        };
        let t = store.get(self.concepts);
        let embs = (0..self.k).map(|c| t.row(c).to_vec()).collect();
        (nets, embs)
    }

    pub fn forward(&self, store: &ParameterStore, batch: &BackboneBatch, d: usize) -> (Vec<f64>, Cache) {
        let k = self.k;
        let mut pairs = Vec::new();
        let mut counts = vec![0.0; batch.n];
        for i in 0..batch.n {
            for c in 0..k {
                if batch.qrows[i * k + c] != 0.0 {
                    pairs.push((i, c));
                    counts[i] += 1.0;
                }
            }
        }
        let h = store.values(self.concepts);
        let gather = |own: &[f64]| {
            Array2::from_shape_fn((pairs.len(), 2 * d), |(p, j)| {
                let (i, c) = pairs[p];
                if j < d {
                    own[i * d + j]
                } else {
                    h[c * d + j - d]
                }
            })
        };
        let xs = gather(&batch.alpha);
        let xe = gather(&batch.beta);
        let mut a = self.f_sk.view(store).affine(xs.view());
        sigmoid_inplace(&mut a);
        let mut e = self.f_ek.view(store).affine(xe.view());
        sigmoid_inplace(&mut e);
        let z = self.f_se.view(store).affine((&a - &e).view());
        let mut logits = vec![0.0; batch.n];
        for (p, &(i, c)) in pairs.iter().enumerate() {
            logits[i] += batch.qrows[i * k + c] * z[(p, 0)];
        }
        for (l, &n) in logits.iter_mut().zip(&counts) {
            if n > 0.0 {
                *l /= n;
            }
        }
        (
            logits,
            Cache {
                pairs,
                counts,
                xs,
                xe,
                a,
                e,
            },
        )
    }

    pub fn backward(
        &self,
        store: &mut ParameterStore,
        batch: &BackboneBatch,
        d: usize,
        cache: Cache,
        dlogits: &[f64],
    ) -> BackboneGrads {
        let k = self.k;
        let np = cache.pairs.len();
        let dz = Array2::from_shape_fn((np, 1), |(p, _)| {
            let (i, c) = cache.pairs[p];
            dlogits[i] * batch.qrows[i * k + c] / cache.counts[i]
        });
        let gap = &cache.a - &cache.e;
        self.f_se.accumulate(store, gap.view(), dz.view());
        let dgap = dz.dot(&self.f_se.view(store).w);

        let mut da = dgap.clone();
        Zip::from(&mut da).and(&cache.a).for_each(|g, &a| *g *= a * (1.0 - a));
        let mut de = dgap;
        Zip::from(&mut de).and(&cache.e).for_each(|g, &e| *g *= -e * (1.0 - e));
        self.f_sk.accumulate(store, cache.xs.view(), da.view());
        self.f_ek.accumulate(store, cache.xe.view(), de.view());
        let dxs = da.dot(&self.f_sk.view(store).w);
        let dxe = de.dot(&self.f_ek.view(store).w);

        let mut g = BackboneGrads {
            alpha: vec![0.0; batch.n * d],
            beta: vec![0.0; batch.n * d],
            disc: vec![0.0; batch.n],
        };
        let dh = store.grad_mut(self.concepts);
        for (p, &(i, c)) in cache.pairs.iter().enumerate() {
            let rs = dxs.slice(s![p, ..]);
            let re = dxe.slice(s![p, ..]);
            for j in 0..d {
                g.alpha[i * d + j] += rs[j];
                g.beta[i * d + j] += re[j];
                dh[c * d + j] += rs[d + j] + re[d + j];
            }
        }
        g
    }
}
