//! The PromptCD model: per-(domain, entity) original embeddings, prompts,
//! fusion maps and a backbone, bound to one [`ParameterStore`].
//!
//! A model is either at the source stage (trained on every source domain) or
//! at the target stage (trained on the target domain's fine-tune split).
//! [`PromptCdModel::transfer_to_target`] moves a source-stage model across:
//! personalized prompts, source shared prompts, fusion maps and backbone
//! internals are kept, the target shared prompt becomes `s2t(p_1 ∥ … ∥ p_S)`,
//! and target original embeddings are either fresh (`ours`) or, for
//! overlapping entities, generated from their prompts (`ours_plus`).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::backbones::{Backbone, BackboneBatch, BackboneCache, BackboneConfig, DenseLayer, DenseParams, KscdNets};
use crate::data::{Aspect, DatasetBundle, EntityKind, InteractionRecord, QMatrix};
use crate::error::{Error, Result};
use crate::grad::{sigmoid, Differentiable, ParamGroup, ParamId, ParamTensor, ParameterStore};
use crate::prompt::{averaging_map, PromptDims, Variant};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Standard deviation of freshly initialized embeddings and prompts.
pub const INIT_STD: f64 = 0.1;

const INIT_SALT: u64 = 0x1A17_0000_0000_0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Source,
    Target,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Source => "source",
            Stage::Target => "target",
        }
    }
}

/// Which representation to read out of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepStage {
    /// The original embedding, before prompt attachment.
    Orig,
    /// The fused representation the backbone sees.
    Out,
}

impl std::str::FromStr for RepStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "orig" | "original" => Ok(RepStage::Orig),
            "out" | "fused" => Ok(RepStage::Out),
            other => Err(Error::Config(format!("unknown embedding stage `{other}` (expected orig or out)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub variant: Variant,
    pub aspect: Aspect,
    /// Prompt width `P`.
    pub prompt_dim: usize,
}

impl ModelConfig {
    pub fn new(backbone: BackboneConfig, variant: Variant, aspect: Aspect) -> Self {
        let prompt_dim = backbone.kind.default_prompt_dim();
        Self {
            backbone,
            variant,
            aspect,
            prompt_dim,
        }
    }

    pub fn dims(&self) -> PromptDims {
        PromptDims {
            prompt: self.prompt_dim,
            embed: self.backbone.embed_dim(),
        }
    }
}

/// One (domain, entity) pair with its own original embedding.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Slot {
    pub domain: String,
    pub id: String,
}

impl Slot {
    fn key(&self) -> String {
        format!("{}:{}", self.domain, self.id)
    }
}

/// Index maps persisted with a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub stage: Stage,
    pub sources: Vec<String>,
    pub target: String,
    /// Overlapping entities, one personalized prompt row each.
    pub overlap: Vec<String>,
    pub students: Vec<Slot>,
    pub exercises: Vec<Slot>,
    pub qmatrix: QMatrix,
}

impl Layout {
    fn from_bundle(bundle: &DatasetBundle, stage: Stage) -> Self {
        let roster = bundle.roster();
        let domains: Vec<String> = match stage {
            Stage::Source => roster.sources().to_vec(),
            Stage::Target => vec![roster.target().to_string()],
        };
        let slots = |kind: EntityKind| -> Vec<Slot> {
            domains
                .iter()
                .flat_map(|d| {
                    roster.universe(d, kind).into_iter().flatten().map(move |id| Slot {
                        domain: d.clone(),
                        id: id.clone(),
                    })
                })
                .collect()
        };
        let students = slots(EntityKind::Student);
        let exercises = slots(EntityKind::Exercise);
        let qmatrix = bundle
            .qmatrix()
            .restricted_to(exercises.iter().map(|s| s.id.as_str()));
        Self {
            stage,
            sources: roster.sources().to_vec(),
            target: roster.target().to_string(),
            overlap: bundle.partition().overlap.iter().cloned().collect(),
            students,
            exercises,
            qmatrix,
        }
    }

    /// Domains whose records this stage trains on.
    pub fn domains(&self) -> Vec<&str> {
        match self.stage {
            Stage::Source => self.sources.iter().map(String::as_str).collect(),
            Stage::Target => vec![self.target.as_str()],
        }
    }

    pub fn slots(&self, kind: EntityKind) -> &[Slot] {
        match kind {
            EntityKind::Student => &self.students,
            EntityKind::Exercise => &self.exercises,
        }
    }
}

/// Everything needed to rebuild a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub layout: Layout,
    pub params: ParameterStore,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Orig {
    Row(usize),
    /// Generated from the personalized prompt in this row.
    Generated(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Prompt {
    None,
    Personal(usize),
    Shared(usize),
    TargetShared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Resolved {
    orig: Orig,
    prompt: Prompt,
}

/// Records translated to table rows; produced by [`PromptCdModel::encode`].
#[derive(Debug, Clone, Default)]
pub struct EncodedBatch {
    students: Vec<Resolved>,
    exercises: Vec<Resolved>,
    disc_rows: Vec<usize>,
    qrows: Vec<f64>,
}

impl EncodedBatch {
    pub fn len(&self) -> usize {
        self.students.len()
    }

    pub fn is_empty(&self) -> bool {
        self.students.is_empty()
    }

    /// Items `range` as a new batch.
    pub fn slice(&self, idx: &[usize]) -> EncodedBatch {
        let k = if self.is_empty() { 0 } else { self.qrows.len() / self.len() };
        EncodedBatch {
            students: idx.iter().map(|&i| self.students[i]).collect(),
            exercises: idx.iter().map(|&i| self.exercises[i]).collect(),
            disc_rows: idx.iter().map(|&i| self.disc_rows[i]).collect(),
            qrows: idx.iter().flat_map(|&i| self.qrows[i * k..(i + 1) * k].iter().copied()).collect(),
        }
    }
}

#[derive(Debug, Clone)]
struct Handles {
    orig: [ParamId; 2],
    disc: ParamId,
    p_o: Option<ParamId>,
    p_d: Option<ParamId>,
    linear_o: Option<DenseParams>,
    linear_d: Option<DenseParams>,
    s2t: Option<DenseParams>,
    init: Option<DenseParams>,
}

fn kind_slot(kind: EntityKind) -> usize {
    match kind {
        EntityKind::Student => 0,
        EntityKind::Exercise => 1,
    }
}

fn orig_tag(kind: EntityKind) -> &'static str {
    match kind {
        EntityKind::Student => "student_orig",
        EntityKind::Exercise => "exercise_orig",
    }
}

pub struct ModelCache {
    students: Vec<Vec<f64>>,
    exercises: Vec<Vec<f64>>,
    shared: Option<(Vec<f64>, Vec<f64>)>,
    batch: BackboneBatch,
    backbone: BackboneCache,
    items: (Vec<Resolved>, Vec<Resolved>, Vec<usize>),
}

/// A PromptCD (or plain backbone) model with its parameters.
#[derive(Debug, Clone)]
pub struct PromptCdModel {
    config: ModelConfig,
    layout: Layout,
    store: ParameterStore,
    backbone: Backbone,
    handles: Handles,
    // (domain, id) → resolved rows, per kind
    lookup: [HashMap<String, HashMap<String, Resolved>>; 2],
    disc_lookup: HashMap<String, HashMap<String, usize>>,
    qrows: HashMap<String, Vec<f64>>,
}

impl PromptCdModel {
    /// Fresh source-stage model over every source domain of `bundle`.
    /// `ours` and `ours_plus` build the same source model; `origin` builds
    /// the backbone without prompts.
    pub fn source(bundle: &DatasetBundle, config: ModelConfig, seed: u64) -> Result<Self> {
        let layout = Layout::from_bundle(bundle, Stage::Source);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ INIT_SALT);
        let mut store = ParameterStore::new();
        let backbone = Backbone::build(&config.backbone, &mut store, &mut rng)?;
        Self::add_slot_tables(&config, &layout, &mut store, &mut rng);
        if config.variant.uses_prompts() {
            let dims = config.dims();
            store.upsert(
                random_tensor("p_o", &[layout.overlap.len(), dims.prompt], ParamGroup::PersonalizedPrompt, &mut rng)
                    .table(layout.overlap.clone()),
            );
            store.upsert(
                random_tensor("p_d", &[layout.sources.len(), dims.prompt], ParamGroup::SharedPrompt, &mut rng)
                    .table(layout.sources.clone()),
            );
            for tag in ["linear_o", "linear_d"] {
                DenseParams::register(&mut store, tag, fusion_init(dims, &mut rng), ParamGroup::Fusion);
            }
        }
        Self::assemble(config, layout, store, backbone)
    }

    /// Backbone without prompts on the target domain only.
    pub fn origin_target(bundle: &DatasetBundle, config: ModelConfig, seed: u64) -> Result<Self> {
        let config = ModelConfig {
            variant: Variant::Origin,
            ..config
        };
        let layout = Layout::from_bundle(bundle, Stage::Target);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ INIT_SALT);
        let mut store = ParameterStore::new();
        let backbone = Backbone::build(&config.backbone, &mut store, &mut rng)?;
        Self::add_slot_tables(&config, &layout, &mut store, &mut rng);
        Self::assemble(config, layout, store, backbone)
    }

    /// Target-stage model at fine-tune step 0, built from this source-stage model.
    pub fn transfer_to_target(&self, bundle: &DatasetBundle, variant: Variant, seed: u64) -> Result<Self> {
        if self.layout.stage != Stage::Source || !self.config.variant.uses_prompts() {
            return Err(Error::Variant("transfer needs a source-stage model with prompts".into()));
        }
        if !variant.uses_prompts() {
            return Err(Error::Variant("origin does not transfer; train it on the target directly".into()));
        }
        let layout = Layout::from_bundle(bundle, Stage::Target);
        if layout.sources != self.layout.sources || layout.overlap != self.layout.overlap {
            return Err(Error::Checkpoint(
                "dataset roster does not match the pre-trained model's sources or overlap set".into(),
            ));
        }
        let config = ModelConfig {
            variant,
            ..self.config.clone()
        };
        let dims = config.dims();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ INIT_SALT ^ 0x7A26E7);
        let mut store = ParameterStore::new();
        for t in self.store.iter() {
            if matches!(t.group, ParamGroup::Embedding) {
                continue;
            }
            let mut t = t.clone();
            t.reset_moments();
            t.grad.iter_mut().for_each(|g| *g = 0.0);
            store.upsert(t);
        }
        Self::add_slot_tables(&config, &layout, &mut store, &mut rng);
        DenseParams::register(
            &mut store,
            "s2t",
            averaging_map(layout.sources.len(), dims.prompt),
            ParamGroup::Transfer,
        );
        if variant == Variant::OursPlus {
            let std = INIT_STD / (dims.prompt as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let w = Array2::from_shape_fn((dims.embed, dims.prompt), |_| normal.sample(&mut rng));
            DenseParams::register(
                &mut store,
                "init",
                DenseLayer::new(w, Array1::zeros(dims.embed)),
                ParamGroup::InitMap,
            );
        }
        let backbone = Backbone::attach(&config.backbone, &store)?;
        Self::assemble(config, layout, store, backbone)
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let backbone = Backbone::attach(&ckpt.config.backbone, &ckpt.params)?;
        Self::assemble(ckpt.config, ckpt.layout, ckpt.params, backbone)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.store.clone(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }

    fn generated(config: &ModelConfig, layout: &Layout, kind: EntityKind) -> bool {
        config.variant == Variant::OursPlus && layout.stage == Stage::Target && kind == config.aspect.overlap_kind()
    }

    fn orig_rows(config: &ModelConfig, layout: &Layout, kind: EntityKind) -> Vec<Slot> {
        let overlap: std::collections::BTreeSet<&String> = layout.overlap.iter().collect();
        let skip = Self::generated(config, layout, kind);
        layout
            .slots(kind)
            .iter()
            .filter(|s| !(skip && overlap.contains(&s.id)))
            .cloned()
            .collect()
    }

    fn add_slot_tables<R: Rng>(config: &ModelConfig, layout: &Layout, store: &mut ParameterStore, rng: &mut R) {
        let d = config.backbone.embed_dim();
        for kind in [EntityKind::Student, EntityKind::Exercise] {
            let rows = Self::orig_rows(config, layout, kind);
            let keys = rows.iter().map(Slot::key).collect();
            store.upsert(random_tensor(orig_tag(kind), &[rows.len(), d], ParamGroup::Embedding, rng).table(keys));
        }
        let keys = layout.exercises.iter().map(Slot::key).collect();
        store.upsert(
            random_tensor("exercise_disc", &[layout.exercises.len(), 1], ParamGroup::Embedding, rng).table(keys),
        );
    }

    fn assemble(config: ModelConfig, layout: Layout, store: ParameterStore, backbone: Backbone) -> Result<Self> {
        let dims = config.dims();
        let d = dims.embed;
        let prompts = config.variant.uses_prompts();
        let check = |tag: &str, shape: Vec<usize>| -> Result<ParamId> {
            let id = store.id(tag)?;
            if store.get(id).shape != shape {
                return Err(Error::Checkpoint(format!(
                    "`{tag}` has shape {:?}, expected {shape:?}",
                    store.get(id).shape
                )));
            }
            Ok(id)
        };
        let orig_len = |kind| Self::orig_rows(&config, &layout, kind).len();
        let handles = Handles {
            orig: [
                check(orig_tag(EntityKind::Student), vec![orig_len(EntityKind::Student), d])?,
                check(orig_tag(EntityKind::Exercise), vec![orig_len(EntityKind::Exercise), d])?,
            ],
            disc: check("exercise_disc", vec![layout.exercises.len(), 1])?,
            p_o: prompts
                .then(|| check("p_o", vec![layout.overlap.len(), dims.prompt]))
                .transpose()?,
            p_d: prompts
                .then(|| check("p_d", vec![layout.sources.len(), dims.prompt]))
                .transpose()?,
            linear_o: prompts
                .then(|| DenseParams::attach(&store, "linear_o", dims.concat(), d))
                .transpose()?,
            linear_d: prompts
                .then(|| DenseParams::attach(&store, "linear_d", dims.concat(), d))
                .transpose()?,
            s2t: (prompts && layout.stage == Stage::Target)
                .then(|| {
                    DenseParams::attach(&store, "s2t", layout.sources.len() * dims.prompt, dims.prompt)
                })
                .transpose()?,
            init: (config.variant == Variant::OursPlus && layout.stage == Stage::Target)
                .then(|| DenseParams::attach(&store, "init", dims.prompt, d))
                .transpose()?,
        };
        if config.backbone.concepts != layout.qmatrix.n_concepts() {
            return Err(Error::Checkpoint(format!(
                "backbone has {} concepts, Q-matrix has {}",
                config.backbone.concepts,
                layout.qmatrix.n_concepts()
            )));
        }

        let overlap_row: HashMap<&str, usize> =
            layout.overlap.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let source_pos: HashMap<&str, usize> =
            layout.sources.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let mut lookup: [HashMap<String, HashMap<String, Resolved>>; 2] = Default::default();
        for kind in [EntityKind::Student, EntityKind::Exercise] {
            let generated = Self::generated(&config, &layout, kind);
            let mut row = 0;
            let table = &mut lookup[kind_slot(kind)];
            for slot in layout.slots(kind) {
                let personal = (kind == config.aspect.overlap_kind())
                    .then(|| overlap_row.get(slot.id.as_str()).copied())
                    .flatten();
                let orig = match personal {
                    Some(o) if generated => Orig::Generated(o),
                    _ => {
                        row += 1;
                        Orig::Row(row - 1)
                    }
                };
                let prompt = match (prompts, personal, layout.stage) {
                    (false, _, _) => Prompt::None,
                    (true, Some(o), _) => Prompt::Personal(o),
                    (true, None, Stage::Source) => Prompt::Shared(source_pos[slot.domain.as_str()]),
                    (true, None, Stage::Target) => Prompt::TargetShared,
                };
                table
                    .entry(slot.domain.clone())
                    .or_default()
                    .insert(slot.id.clone(), Resolved { orig, prompt });
            }
        }
        let mut disc_lookup: HashMap<String, HashMap<String, usize>> = HashMap::new();
        for (i, slot) in layout.exercises.iter().enumerate() {
            disc_lookup
                .entry(slot.domain.clone())
                .or_default()
                .insert(slot.id.clone(), i);
        }
        let qrows = layout
            .exercises
            .iter()
            .filter_map(|s| {
                layout
                    .qmatrix
                    .row(&s.id)
                    .map(|q| (s.id.clone(), q.iter().map(|&v| f64::from(v)).collect()))
            })
            .collect::<HashMap<String, Vec<f64>>>();
        if let Some(missing) = layout.exercises.iter().find(|s| !qrows.contains_key(&s.id)) {
            return Err(Error::Checkpoint(format!("exercise `{}` has no Q row", missing.id)));
        }
        Ok(Self {
            config,
            layout,
            store,
            backbone,
            handles,
            lookup,
            disc_lookup,
            qrows,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn stage(&self) -> Stage {
        self.layout.stage
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn dims(&self) -> PromptDims {
        self.config.dims()
    }

    /// Translates records into table rows. Records of a domain this stage
    /// does not train on, or of entities it has never seen, are lookup errors.
    pub fn encode(&self, records: &[InteractionRecord]) -> Result<EncodedBatch> {
        let k = self.config.backbone.concepts;
        let mut batch = EncodedBatch {
            students: Vec::with_capacity(records.len()),
            exercises: Vec::with_capacity(records.len()),
            disc_rows: Vec::with_capacity(records.len()),
            qrows: Vec::with_capacity(records.len() * k),
        };
        for r in records {
            batch.students.push(self.resolve(EntityKind::Student, &r.domain_id, &r.student_id)?);
            batch.exercises.push(self.resolve(EntityKind::Exercise, &r.domain_id, &r.exercise_id)?);
            batch.disc_rows.push(self.disc_lookup[&r.domain_id][&r.exercise_id]);
            batch.qrows.extend_from_slice(&self.qrows[&r.exercise_id]);
        }
        Ok(batch)
    }

    fn resolve(&self, kind: EntityKind, domain: &str, id: &str) -> Result<Resolved> {
        let table = self.lookup[kind_slot(kind)].get(domain).ok_or_else(|| {
            Error::Lookup(format!(
                "domain `{domain}` is not part of this {} stage model",
                self.layout.stage.as_str()
            ))
        })?;
        table
            .get(id)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("unknown {kind} `{id}` in domain `{domain}`")))
    }

    /// Predicted probabilities of a correct answer.
    pub fn predict(&self, records: &[InteractionRecord]) -> Result<Vec<f64>> {
        let batch = self.encode(records)?;
        self.predict_encoded(&batch)
    }

    pub fn predict_encoded(&self, batch: &EncodedBatch) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(batch.len());
        let idx: Vec<usize> = (0..batch.len()).collect();
        for chunk in idx.chunks(4096) {
            let (logits, _) = self.forward(&batch.slice(chunk))?;
            out.extend(logits.into_iter().map(sigmoid));
        }
        Ok(out)
    }

    fn row(&self, id: ParamId, r: usize) -> &[f64] {
        self.store.get(id).row(r)
    }

    fn target_shared(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let s2t = self.handles.s2t?;
        let p_d = self.store.get(self.handles.p_d?);
        let joined: Vec<f64> = (0..self.layout.sources.len()).flat_map(|k| p_d.row(k).to_vec()).collect();
        let phat = s2t.view(&self.store).w.dot(&Array1::from(joined.clone())) + s2t.view(&self.store).b;
        Some((joined, phat.to_vec()))
    }

    fn original(&self, kind: EntityKind, r: Resolved) -> Vec<f64> {
        match r.orig {
            Orig::Row(row) => self.row(self.handles.orig[kind_slot(kind)], row).to_vec(),
            Orig::Generated(o) => {
                let init = self.handles.init.expect("generated rows imply an init map");
                let v = init.view(&self.store);
                (v.w.dot(&ndarray::ArrayView1::from(self.row(self.handles.p_o.expect("prompts"), o))) + v.b).to_vec()
            }
        }
    }

    /// `(concat or original, fused output)` for one resolved entity.
    fn represent(&self, kind: EntityKind, r: Resolved, shared: Option<&Vec<f64>>) -> (Vec<f64>, Vec<f64>) {
        let orig = self.original(kind, r);
        let (prompt, fusion) = match r.prompt {
            Prompt::None => return (orig.clone(), orig),
            Prompt::Personal(o) => (self.row(self.handles.p_o.expect("prompts"), o), self.handles.linear_o),
            Prompt::Shared(k) => (self.row(self.handles.p_d.expect("prompts"), k), self.handles.linear_d),
            Prompt::TargetShared => (shared.expect("target shared prompt").as_slice(), self.handles.linear_d),
        };
        let cat: Vec<f64> = prompt.iter().chain(&orig).copied().collect();
        let v = fusion.expect("fusion maps").view(&self.store);
        let out = v.w.dot(&ndarray::ArrayView1::from(&cat)) + v.b;
        (cat, out.to_vec())
    }

    /// Representation of one (domain, entity) pair.
    pub fn representation(&self, kind: EntityKind, domain: &str, id: &str, stage: RepStage) -> Result<Vec<f64>> {
        let r = self.resolve(kind, domain, id)?;
        Ok(match stage {
            RepStage::Orig => self.original(kind, r),
            RepStage::Out => {
                let shared = self.target_shared().map(|s| s.1);
                self.represent(kind, r, shared.as_ref()).1
            }
        })
    }

    /// Raw (pre-activation) discrimination of an exercise in a domain.
    pub fn discrimination(&self, domain: &str, exercise: &str) -> Result<f64> {
        let row = self
            .disc_lookup
            .get(domain)
            .and_then(|m| m.get(exercise))
            .ok_or_else(|| Error::Lookup(format!("unknown exercise `{exercise}` in domain `{domain}`")))?;
        Ok(self.row(self.handles.disc, *row)[0])
    }

    pub fn qrow(&self, exercise: &str) -> Option<&[f64]> {
        self.qrows.get(exercise).map(Vec::as_slice)
    }

    pub fn ncdm_layers(&self) -> Option<Vec<DenseLayer>> {
        self.backbone.ncdm_layers(&self.store)
    }

    /// KSCD networks and concept embeddings.
    pub fn kscd_nets(&self) -> Option<(KscdNets, Vec<Vec<f64>>)> {
        self.backbone.kscd_nets(&self.store)
    }

    /// Personalized prompt of an overlapping entity.
    pub fn personalized_prompt(&self, id: &str) -> Result<&[f64]> {
        let p_o = self
            .handles
            .p_o
            .ok_or_else(|| Error::Variant("origin models have no prompts".into()))?;
        let row = self
            .layout
            .overlap
            .iter()
            .position(|o| o == id)
            .ok_or_else(|| Error::Lookup(format!("`{id}` is not an overlapping entity")))?;
        Ok(self.row(p_o, row))
    }
}

fn random_tensor<R: Rng>(tag: &str, shape: &[usize], group: ParamGroup, rng: &mut R) -> ParamTensor {
    let normal = Normal::new(0.0, INIT_STD).expect("positive std");
    let n = shape.iter().product();
    ParamTensor::new(tag, shape.to_vec(), (0..n).map(|_| normal.sample(rng)).collect(), group).expect("shape")
}

// [random | I]: the prompt columns start small, the original passes through.
fn fusion_init<R: Rng>(dims: PromptDims, rng: &mut R) -> DenseLayer {
    let std = (1.0 / dims.concat() as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let w = Array2::from_shape_fn((dims.embed, dims.concat()), |(r, c)| {
        if c < dims.prompt {
            normal.sample(rng)
        } else if c - dims.prompt == r {
            1.0
        } else {
            0.0
        }
    });
    DenseLayer::new(w, Array1::zeros(dims.embed))
}

impl Differentiable for PromptCdModel {
    type Batch = EncodedBatch;
    type Cache = ModelCache;

    fn params(&self) -> &ParameterStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    fn forward(&self, batch: &EncodedBatch) -> Result<(Vec<f64>, ModelCache)> {
        let n = batch.len();
        let d = self.dims().embed;
        let shared = self.target_shared();
        let phat = shared.as_ref().map(|s| &s.1);
        let mut bb = BackboneBatch {
            n,
            alpha: Vec::with_capacity(n * d),
            beta: Vec::with_capacity(n * d),
            disc: Vec::with_capacity(n),
            qrows: batch.qrows.clone(),
        };
        let mut students = Vec::with_capacity(n);
        let mut exercises = Vec::with_capacity(n);
        for i in 0..n {
            let (cat, out) = self.represent(EntityKind::Student, batch.students[i], phat);
            bb.alpha.extend_from_slice(&out);
            students.push(cat);
            let (cat, out) = self.represent(EntityKind::Exercise, batch.exercises[i], phat);
            bb.beta.extend_from_slice(&out);
            exercises.push(cat);
            bb.disc.push(self.row(self.handles.disc, batch.disc_rows[i])[0]);
        }
        let (logits, cache) = self.backbone.forward(&self.store, &bb, d);
        Ok((
            logits,
            ModelCache {
                students,
                exercises,
                shared,
                batch: bb,
                backbone: cache,
                items: (batch.students.clone(), batch.exercises.clone(), batch.disc_rows.clone()),
            },
        ))
    }

    fn backward(&mut self, cache: ModelCache, dlogits: &[f64]) -> Result<()> {
        let d = self.dims().embed;
        let p = self.dims().prompt;
        let grads = self
            .backbone
            .backward(&mut self.store, &cache.batch, d, cache.backbone, dlogits);
        let (stu, exe, disc_rows) = cache.items;
        {
            let g = self.store.grad_mut(self.handles.disc);
            for (i, &row) in disc_rows.iter().enumerate() {
                g[row] += grads.disc[i];
            }
        }

        let weights = |h: Option<DenseParams>, store: &ParameterStore| h.map(|h| store.values(h.weight).to_vec());
        let w_o = weights(self.handles.linear_o, &self.store);
        let w_d = weights(self.handles.linear_d, &self.store);
        let w_init = weights(self.handles.init, &self.store);
        let cat_w = d + p;
        let mut d_phat = vec![0.0; p];

        let sides = [
            (EntityKind::Student, &stu, &cache.students, &grads.alpha),
            (EntityKind::Exercise, &exe, &cache.exercises, &grads.beta),
        ];
        for (kind, items, cats, g) in sides {
            for (i, r) in items.iter().enumerate() {
                let dr = &g[i * d..(i + 1) * d];
                let (d_prompt, d_orig): (Vec<f64>, Vec<f64>) = if r.prompt == Prompt::None {
                    (Vec::new(), dr.to_vec())
                } else {
                    let (fusion, w) = match r.prompt {
                        Prompt::Personal(_) => (self.handles.linear_o.expect("fusion"), w_o.as_ref().expect("fusion")),
                        _ => (self.handles.linear_d.expect("fusion"), w_d.as_ref().expect("fusion")),
                    };
                    let cat = &cats[i];
                    let mut dcat = vec![0.0; cat_w];
                    {
                        let gw = self.store.grad_mut(fusion.weight);
                        for (o, &gr) in dr.iter().enumerate() {
                            if gr == 0.0 {
                                continue;
                            }
                            for j in 0..cat_w {
                                gw[o * cat_w + j] += gr * cat[j];
                                dcat[j] += gr * w[o * cat_w + j];
                            }
                        }
                    }
                    let gb = self.store.grad_mut(fusion.bias);
                    for (o, &gr) in dr.iter().enumerate() {
                        gb[o] += gr;
                    }
                    let d_orig = dcat.split_off(p);
                    (dcat, d_orig)
                };

                match r.orig {
                    Orig::Row(row) => {
                        let t = self.store.get_mut(self.handles.orig[kind_slot(kind)]);
                        for (a, b) in t.grad_row_mut(row).iter_mut().zip(&d_orig) {
                            *a += b;
                        }
                    }
                    Orig::Generated(o) => {
                        let init = self.handles.init.expect("init map");
                        let w = w_init.as_ref().expect("init map");
                        let p_o = self.handles.p_o.expect("prompts");
                        let prompt = self.store.get(p_o).row(o).to_vec();
                        let mut dp = vec![0.0; p];
                        let gw = self.store.grad_mut(init.weight);
                        for (r_, &gr) in d_orig.iter().enumerate() {
                            for j in 0..p {
                                gw[r_ * p + j] += gr * prompt[j];
                                dp[j] += gr * w[r_ * p + j];
                            }
                        }
                        let gb = self.store.grad_mut(init.bias);
                        for (r_, &gr) in d_orig.iter().enumerate() {
                            gb[r_] += gr;
                        }
                        for (a, b) in self.store.get_mut(p_o).grad_row_mut(o).iter_mut().zip(&dp) {
                            *a += b;
                        }
                    }
                }

                match r.prompt {
                    Prompt::None => {}
                    Prompt::Personal(o) => {
                        let t = self.store.get_mut(self.handles.p_o.expect("prompts"));
                        for (a, b) in t.grad_row_mut(o).iter_mut().zip(&d_prompt) {
                            *a += b;
                        }
                    }
                    Prompt::Shared(k) => {
                        let t = self.store.get_mut(self.handles.p_d.expect("prompts"));
                        for (a, b) in t.grad_row_mut(k).iter_mut().zip(&d_prompt) {
                            *a += b;
                        }
                    }
                    Prompt::TargetShared => {
                        for (a, b) in d_phat.iter_mut().zip(&d_prompt) {
                            *a += b;
                        }
                    }
                }
            }
        }

        if let (Some(s2t), Some((joined, _))) = (self.handles.s2t, cache.shared.as_ref()) {
            let in_w = joined.len();
            let w = self.store.values(s2t.weight).to_vec();
            let mut d_joined = vec![0.0; in_w];
            let gw = self.store.grad_mut(s2t.weight);
            for (o, &gr) in d_phat.iter().enumerate() {
                for j in 0..in_w {
                    gw[o * in_w + j] += gr * joined[j];
                    d_joined[j] += gr * w[o * in_w + j];
                }
            }
            let gb = self.store.grad_mut(s2t.bias);
            for (o, &gr) in d_phat.iter().enumerate() {
                gb[o] += gr;
            }
            let g = self.store.grad_mut(self.handles.p_d.expect("prompts"));
            for (a, b) in g.iter_mut().zip(&d_joined) {
                *a += b;
            }
        }
        Ok(())
    }

    fn after_step(&mut self) {
        self.backbone.after_step(&mut self.store);
    }
}
