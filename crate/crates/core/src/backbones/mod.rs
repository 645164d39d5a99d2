//! Interaction functions mapping a student representation and an exercise
//! representation to the probability of a correct answer.
//!
//! Each backbone exists twice: a plain single-sample function (`irt_forward`,
//! `mirt_forward`, ...) for direct use, and a batched form with hand-written
//! gradients that the training code drives through a [`ParameterStore`].

mod dense;
mod irt;
mod kscd;
mod mirt;
mod ncdm;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use dense::DenseLayer;
pub use irt::{irt_forward, IRT_SCALE};
pub use kscd::{kscd_forward, KscdNets};
pub use mirt::mirt_forward;
pub use ncdm::ncdm_forward;

pub(crate) use dense::DenseParams;

use crate::error::{Error, Result};
use crate::grad::ParameterStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    Irt,
    Mirt,
    Ncdm,
    Kscd,
}

impl BackboneKind {
    pub const ALL: [BackboneKind; 4] = [BackboneKind::Irt, BackboneKind::Mirt, BackboneKind::Ncdm, BackboneKind::Kscd];

    pub fn as_str(self) -> &'static str {
        match self {
            BackboneKind::Irt => "irt",
            BackboneKind::Mirt => "mirt",
            BackboneKind::Ncdm => "ncdm",
            BackboneKind::Kscd => "kscd",
        }
    }

    /// Prompt width used unless configured otherwise.
    pub fn default_prompt_dim(self) -> usize {
        match self {
            BackboneKind::Irt => 5,
            BackboneKind::Mirt => 10,
            BackboneKind::Ncdm | BackboneKind::Kscd => 20,
        }
    }
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "irt" => Ok(BackboneKind::Irt),
            "mirt" => Ok(BackboneKind::Mirt),
            "ncdm" | "neuralcd" | "ncd" => Ok(BackboneKind::Ncdm),
            "kscd" => Ok(BackboneKind::Kscd),
            other => Err(Error::Config(format!("unknown backbone `{other}`"))),
        }
    }
}

/// Backbone kind plus the dimensions it needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    /// Number of knowledge concepts `K`.
    pub concepts: usize,
    /// Latent width for MIRT and KSCD; ignored by IRT (1) and NCDM (`K`).
    pub latent_dim: usize,
    /// NCDM: widths of the two hidden layers. KSCD: width of `f_sk` / `f_ek`.
    pub hidden: Vec<usize>,
}

impl BackboneConfig {
    pub fn new(kind: BackboneKind, concepts: usize) -> Self {
        let (latent_dim, hidden) = match kind {
            BackboneKind::Irt => (1, vec![]),
            BackboneKind::Mirt => (16, vec![]),
            BackboneKind::Ncdm => (concepts, vec![512, 256]),
            BackboneKind::Kscd => (16, vec![64]),
        };
        Self {
            kind,
            concepts,
            latent_dim,
            hidden,
        }
    }

    pub fn with_latent_dim(mut self, dim: usize) -> Self {
        self.latent_dim = dim;
        self
    }

    pub fn with_hidden(mut self, hidden: Vec<usize>) -> Self {
        self.hidden = hidden;
        self
    }

    /// Width `d` of student and exercise representations.
    pub fn embed_dim(&self) -> usize {
        match self.kind {
            BackboneKind::Irt => 1,
            BackboneKind::Mirt | BackboneKind::Kscd => self.latent_dim,
            BackboneKind::Ncdm => self.concepts,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.concepts == 0 {
            return Err(Error::Config("backbone needs at least one concept".into()));
        }
        match self.kind {
            BackboneKind::Irt => Ok(()),
            BackboneKind::Mirt if self.latent_dim == 0 => Err(Error::Config("MIRT latent_dim must be ≥ 1".into())),
            BackboneKind::Ncdm if self.hidden.len() != 2 || self.hidden.contains(&0) => {
                Err(Error::Config("NCDM needs two non-zero hidden widths".into()))
            }
            BackboneKind::Kscd if self.latent_dim == 0 || self.hidden.len() != 1 || self.hidden[0] == 0 => {
                Err(Error::Config("KSCD needs latent_dim ≥ 1 and one non-zero hidden width".into()))
            }
            _ => Ok(()),
        }
    }
}

/// One batch of backbone inputs, row-major.
#[derive(Debug, Clone, Default)]
pub struct BackboneBatch {
    pub n: usize,
    /// `n × d` fused student representations.
    pub alpha: Vec<f64>,
    /// `n × d` fused exercise representations.
    pub beta: Vec<f64>,
    /// `n` raw exercise discriminations (unused by KSCD).
    pub disc: Vec<f64>,
    /// `n × K` Q rows as 0.0 / 1.0.
    pub qrows: Vec<f64>,
}

/// ∂loss/∂input for a [`BackboneBatch`].
#[derive(Debug, Clone, Default)]
pub struct BackboneGrads {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub disc: Vec<f64>,
}

pub(crate) enum BackboneCache {
    Plain,
    Ncdm(ncdm::Cache),
    Kscd(kscd::Cache),
}

/// A backbone bound to parameters inside a store.
#[derive(Debug, Clone)]
pub(crate) enum Backbone {
    Irt,
    Mirt,
    Ncdm(ncdm::NcdmParams),
    Kscd(kscd::KscdParams),
}

impl Backbone {
    pub fn build<R: Rng>(config: &BackboneConfig, store: &mut ParameterStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        Ok(match config.kind {
            BackboneKind::Irt => Backbone::Irt,
            BackboneKind::Mirt => Backbone::Mirt,
            BackboneKind::Ncdm => Backbone::Ncdm(ncdm::NcdmParams::build(config, store, rng)),
            BackboneKind::Kscd => Backbone::Kscd(kscd::KscdParams::build(config, store, rng)),
        })
    }

    /// Binds to parameters already present in `store` (e.g. from a checkpoint).
    pub fn attach(config: &BackboneConfig, store: &ParameterStore) -> Result<Self> {
        config.validate()?;
        Ok(match config.kind {
            BackboneKind::Irt => Backbone::Irt,
            BackboneKind::Mirt => Backbone::Mirt,
            BackboneKind::Ncdm => Backbone::Ncdm(ncdm::NcdmParams::attach(config, store)?),
            BackboneKind::Kscd => Backbone::Kscd(kscd::KscdParams::attach(config, store)?),
        })
    }

    pub fn forward(&self, store: &ParameterStore, batch: &BackboneBatch, dim: usize) -> (Vec<f64>, BackboneCache) {
        match self {
            Backbone::Irt => (irt::logits(batch), BackboneCache::Plain),
            Backbone::Mirt => (mirt::logits(batch, dim), BackboneCache::Plain),
            Backbone::Ncdm(p) => {
                let (logits, cache) = p.forward(store, batch, dim);
                (logits, BackboneCache::Ncdm(cache))
            }
            Backbone::Kscd(p) => {
                let (logits, cache) = p.forward(store, batch, dim);
                (logits, BackboneCache::Kscd(cache))
            }
        }
    }

    pub fn backward(
        &self,
        store: &mut ParameterStore,
        batch: &BackboneBatch,
        dim: usize,
        cache: BackboneCache,
        dlogits: &[f64],
    ) -> BackboneGrads {
        match (self, cache) {
            (Backbone::Irt, _) => irt::backward(batch, dlogits),
            (Backbone::Mirt, _) => mirt::backward(batch, dim, dlogits),
            (Backbone::Ncdm(p), BackboneCache::Ncdm(c)) => p.backward(store, batch, dim, c, dlogits),
            (Backbone::Kscd(p), BackboneCache::Kscd(c)) => p.backward(store, batch, dim, c, dlogits),
            _ => unreachable!("cache recorded by a different backbone"),
        }
    }

    /// Post-step projection: NCDM weights are clamped non-negative.
    pub fn after_step(&self, store: &mut ParameterStore) {
        if let Backbone::Ncdm(p) = self {
            p.clamp_weights(store);
        }
    }

    pub fn ncdm_layers(&self, store: &ParameterStore) -> Option<Vec<DenseLayer>> {
        match self {
            Backbone::Ncdm(p) => Some(p.layers(store)),
            _ => None,
        }
    }

    pub fn kscd_nets(&self, store: &ParameterStore) -> Option<(KscdNets, Vec<Vec<f64>>)> {
        match self {
            Backbone::Kscd(p) => Some(p.nets(store)),
            _ => None,
        }
    }
}

/// Sets every negative entry to zero.
pub fn clamp_positive(weights: &mut [f64]) {
    for w in weights.iter_mut() {
        if *w < 0.0 {
            *w = 0.0;
        }
    }
}

pub(crate) fn check_qrow(qrow: &[f64]) -> Result<usize> {
    let active = qrow.iter().filter(|&&q| q != 0.0).count();
    if active == 0 {
        return Err(Error::Precondition("exercise has no active concept".into()));
    }
    Ok(active)
}
