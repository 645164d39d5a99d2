use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coarse parameter families, used for freezing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// Per-(domain, entity) original embeddings and exercise discriminations.
    Embedding,
    PersonalizedPrompt,
    SharedPrompt,
    Fusion,
    /// Source-to-target shared prompt map.
    Transfer,
    /// Prompt-to-representation map.
    InitMap,
    Backbone,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 7] = [
        ParamGroup::Embedding,
        ParamGroup::PersonalizedPrompt,
        ParamGroup::SharedPrompt,
        ParamGroup::Fusion,
        ParamGroup::Transfer,
        ParamGroup::InitMap,
        ParamGroup::Backbone,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Embedding => "embedding",
            ParamGroup::PersonalizedPrompt => "personalized_prompt",
            ParamGroup::SharedPrompt => "shared_prompt",
            ParamGroup::Fusion => "fusion",
            ParamGroup::Transfer => "transfer",
            ParamGroup::InitMap => "init_map",
            ParamGroup::Backbone => "backbone",
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParamGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ParamGroup::ALL
            .into_iter()
            .find(|g| g.as_str() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown parameter group `{s}`")))
    }
}

/// A trainable tensor with its gradient accumulator and Adam moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub tag: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    #[serde(skip)]
    pub grad: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub group: ParamGroup,
    /// Entity or domain ids labelling the rows of a lookup table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_keys: Option<Vec<String>>,
    /// Lookup tables are updated row-wise: rows without gradient are left alone.
    pub sparse_rows: bool,
    pub trainable: bool,
}

impl ParamTensor {
    pub fn new(tag: impl Into<String>, shape: Vec<usize>, values: Vec<f64>, group: ParamGroup) -> Result<Self> {
        let tag = tag.into();
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::Shape(format!(
                "`{tag}`: shape {shape:?} holds {n} values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            tag,
            shape,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
            values,
            group,
            row_keys: None,
            sparse_rows: false,
            trainable: true,
        })
    }

    pub fn zeros(tag: impl Into<String>, shape: Vec<usize>, group: ParamGroup) -> Self {
        let n = shape.iter().product();
        Self::new(tag, shape, vec![0.0; n], group).expect("consistent shape")
    }

    pub fn table(mut self, keys: Vec<String>) -> Self {
        debug_assert_eq!(keys.len(), self.shape[0]);
        self.row_keys = Some(keys);
        self.sparse_rows = true;
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Width of one row (product of trailing dimensions).
    pub fn row_width(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.row_width();
        &self.values[r * w..(r + 1) * w]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let w = self.row_width();
        &mut self.values[r * w..(r + 1) * w]
    }

    pub fn grad_row_mut(&mut self, r: usize) -> &mut [f64] {
        let w = self.row_width();
        &mut self.grad[r * w..(r + 1) * w]
    }

    pub fn reset_moments(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered collection of tensors addressed by tag or by [`ParamId`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "StoreRepr", into = "StoreRepr")]
pub struct ParameterStore {
    tensors: Vec<ParamTensor>,
    by_tag: HashMap<String, usize>,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct StoreRepr {
    step: u64,
    tensors: Vec<ParamTensor>,
}

impl From<StoreRepr> for ParameterStore {
    fn from(repr: StoreRepr) -> Self {
        let mut store = ParameterStore {
            step: repr.step,
            ..Default::default()
        };
        for mut t in repr.tensors {
            t.grad = vec![0.0; t.values.len()];
            if t.m.len() != t.values.len() {
                t.m = vec![0.0; t.values.len()];
            }
            if t.v.len() != t.values.len() {
                t.v = vec![0.0; t.values.len()];
            }
            store.by_tag.insert(t.tag.clone(), store.tensors.len());
            store.tensors.push(t);
        }
        store
    }
}

impl From<ParameterStore> for StoreRepr {
    fn from(store: ParameterStore) -> Self {
        StoreRepr {
            step: store.step,
            tensors: store.tensors,
        }
    }
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, tensor: ParamTensor) -> Result<ParamId> {
        if self.by_tag.contains_key(&tensor.tag) {
            return Err(Error::State(format!("duplicate parameter `{}`", tensor.tag)));
        }
        let id = self.tensors.len();
        self.by_tag.insert(tensor.tag.clone(), id);
        self.tensors.push(tensor);
        Ok(ParamId(id))
    }

    /// Replaces the tensor with the same tag, or adds it.
    pub fn upsert(&mut self, tensor: ParamTensor) -> ParamId {
        match self.by_tag.get(&tensor.tag) {
            Some(&i) => {
                self.tensors[i] = tensor;
                ParamId(i)
            }
            None => self.add(tensor).expect("tag is new"),
        }
    }

    pub fn id(&self, tag: &str) -> Result<ParamId> {
        self.by_tag
            .get(tag)
            .map(|&i| ParamId(i))
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{tag}`")))
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.by_tag.contains_key(tag)
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.tensors[id.0]
    }

    pub fn by_tag(&self, tag: &str) -> Option<&ParamTensor> {
        self.by_tag.get(tag).map(|&i| &self.tensors[i])
    }

    pub fn by_tag_mut(&mut self, tag: &str) -> Option<&mut ParamTensor> {
        self.by_tag.get(tag).map(|&i| &mut self.tensors[i])
    }

    pub fn values(&self, id: ParamId) -> &[f64] {
        &self.tensors[id.0].values
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.tensors[id.0].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Number of optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn set_trainable(&mut self, group: ParamGroup, trainable: bool) {
        for t in self.tensors.iter_mut().filter(|t| t.group == group) {
            t.trainable = trainable;
        }
    }

    pub fn n_values(&self) -> usize {
        self.tensors.iter().map(ParamTensor::len).sum()
    }
}
