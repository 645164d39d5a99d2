//! Prompt attachment, fusion and source-to-target transfer as plain functions.
//!
//! [`crate::model::PromptCdModel`] runs the same computations batched and
//! with gradients; these single-vector forms are the reference it is tested
//! against and what the examples use.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::backbones::DenseLayer;
use crate::data::EntityPartition;
use crate::error::{Error, Result};

/// Which model is trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Backbone alone, trained on target data only.
    Origin,
    /// Prompt transfer with freshly initialized target embeddings.
    Ours,
    /// Prompt transfer with target embeddings of overlapping entities
    /// generated from their personalized prompts.
    OursPlus,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Origin, Variant::Ours, Variant::OursPlus];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Origin => "origin",
            Variant::Ours => "ours",
            Variant::OursPlus => "ours_plus",
        }
    }

    pub fn uses_prompts(self) -> bool {
        self != Variant::Origin
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "origin" => Ok(Variant::Origin),
            "ours" => Ok(Variant::Ours),
            "ours_plus" | "ours+" | "oursplus" | "ours-plus" => Ok(Variant::OursPlus),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

/// Prompt width `P` and representation width `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptDims {
    pub prompt: usize,
    pub embed: usize,
}

impl PromptDims {
    pub fn concat(&self) -> usize {
        self.prompt + self.embed
    }
}

/// `[prompt ∥ original]`.
pub fn attach(prompt: &[f64], original: &[f64], dims: PromptDims) -> Result<Vec<f64>> {
    if prompt.len() != dims.prompt || original.len() != dims.embed {
        return Err(Error::Shape(format!(
            "attach expects prompt {} and original {}, got {} and {}",
            dims.prompt,
            dims.embed,
            prompt.len(),
            original.len()
        )));
    }
    Ok(prompt.iter().chain(original).copied().collect())
}

/// Splits a concatenation back into `(prompt, original)`.
pub fn detach(concat: &[f64], dims: PromptDims) -> Result<(&[f64], &[f64])> {
    if concat.len() != dims.concat() {
        return Err(Error::Shape(format!(
            "concatenation has {} values, expected {}",
            concat.len(),
            dims.concat()
        )));
    }
    Ok(concat.split_at(dims.prompt))
}

/// Which fusion map applies to an entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    Overlapping,
    NonOverlapping,
}

/// The two scenario-wide fusion maps `(P + d) → d`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionMaps {
    pub overlapping: DenseLayer,
    pub non_overlapping: DenseLayer,
}

impl FusionMaps {
    pub fn get(&self, which: FusionKind) -> &DenseLayer {
        match which {
            FusionKind::Overlapping => &self.overlapping,
            FusionKind::NonOverlapping => &self.non_overlapping,
        }
    }
}

/// `W x + b`, checking that `x` has the map's input width.
pub fn apply_affine(map: &DenseLayer, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != map.inputs() {
        return Err(Error::Shape(format!(
            "affine map takes {} inputs, got {}",
            map.inputs(),
            x.len()
        )));
    }
    Ok(map.apply(x))
}

pub fn fuse(concat: &[f64], which: FusionKind, maps: &FusionMaps) -> Result<Vec<f64>> {
    apply_affine(maps.get(which), concat)
}

/// Personalized prompts carry over unchanged.
pub fn transfer_personalized(partition: &EntityPartition, entity: &str, prompt: &[f64]) -> Result<Vec<f64>> {
    if !partition.is_overlapping(entity) {
        return Err(Error::Lookup(format!("`{entity}` is not an overlapping entity")));
    }
    Ok(prompt.to_vec())
}

/// Target shared prompt from the source shared prompts, concatenated in
/// roster order.
pub fn transfer_shared(prompts: &[Vec<f64>], s2t: &DenseLayer) -> Result<Vec<f64>> {
    let width = prompts.first().map_or(0, Vec::len);
    if prompts.is_empty() || prompts.iter().any(|p| p.len() != width) || prompts.len() * width != s2t.inputs() {
        return Err(Error::Shape(format!(
            "s2t map takes {} inputs; got {} prompts of width {}",
            s2t.inputs(),
            prompts.len(),
            width
        )));
    }
    let joined: Vec<f64> = prompts.concat();
    Ok(s2t.apply(&joined))
}

/// `|S|·P → P` map whose output is the coordinate-wise mean of the inputs.
pub fn averaging_map(n_sources: usize, prompt_dim: usize) -> DenseLayer {
    let w = 1.0 / n_sources as f64;
    let weight = Array2::from_shape_fn((prompt_dim, n_sources * prompt_dim), |(r, c)| {
        if c % prompt_dim == r {
            w
        } else {
            0.0
        }
    });
    DenseLayer::new(weight, Array1::zeros(prompt_dim))
}

/// Target original embedding generated from a transferred personalized prompt.
pub fn init_from_prompt(prompt: &[f64], init_map: &DenseLayer, variant: Variant) -> Result<Vec<f64>> {
    if variant != Variant::OursPlus {
        return Err(Error::Variant(format!(
            "prompt-generated embeddings belong to ours_plus, not {variant}"
        )));
    }
    apply_affine(init_map, prompt)
}
