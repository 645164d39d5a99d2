//! Pre-training on source domains, transfer, and fine-tuning on the target's
//! few-shot split, plus the target-only baseline.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbones::{BackboneConfig, BackboneKind};
use crate::data::{split_finetune, Aspect, DatasetBundle, InteractionRecord};
use crate::error::{Error, Result};
use crate::eval::{MetricReport, DEFAULT_THRESHOLD};
use crate::grad::{evaluate_loss, train_step, AdamConfig, Differentiable, ParamGroup};
use crate::model::{EncodedBatch, ModelConfig, PromptCdModel, Stage};
use crate::prompt::Variant;

const SPLIT_SALT: u64 = 0x5EED_0000_0000_0002;
const HOLDOUT_SALT: u64 = 0x5EED_0000_0000_0003;
const SHUFFLE_SALT: u64 = 0x5EED_0000_0000_0004;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    /// Epochs without held-out improvement before stopping.
    pub patience: usize,
    /// Fraction of each training set held out for early stopping.
    pub holdout: f64,
    /// Parameter groups kept fixed during fine-tuning.
    pub frozen: Vec<ParamGroup>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 256,
            pretrain_epochs: 20,
            finetune_epochs: 10,
            patience: 3,
            holdout: 0.1,
            frozen: Vec::new(),
        }
    }
}

/// One experiment: aspect, variant, backbone, roster and hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub aspect: Aspect,
    pub variant: Variant,
    pub backbone: BackboneConfig,
    pub prompt_dim: usize,
    pub sources: Vec<String>,
    pub target: String,
    /// Share of target records used for fine-tuning; the rest is the test split.
    pub ratio: f64,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
}

impl ScenarioSpec {
    /// The desk-scale benchmark: two sources and one target from
    /// [`crate::data::SynthConfig::default`], 20% fine-tuning, five seeds.
    pub fn benchmark(kind: BackboneKind, variant: Variant) -> Self {
        let synth = crate::data::SynthConfig::default();
        Self {
            name: "benchmark".into(),
            aspect: synth.aspect,
            variant,
            backbone: BackboneConfig::new(kind, synth.concepts),
            prompt_dim: kind.default_prompt_dim(),
            sources: synth.source_ids(),
            target: synth.target_id(),
            ratio: 0.2,
            seeds: vec![0, 1, 2, 3, 4],
            train: TrainConfig::default(),
        }
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            backbone: self.backbone.clone(),
            variant: self.variant,
            aspect: self.aspect,
            prompt_dim: self.prompt_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(Error::Config(format!("ratio {} is outside [0, 1]", self.ratio)));
        }
        if !(0.0..1.0).contains(&self.train.holdout) {
            return Err(Error::Config(format!("holdout {} is outside [0, 1)", self.train.holdout)));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.prompt_dim == 0 && self.variant.uses_prompts() {
            return Err(Error::Config("prompt_dim must be positive".into()));
        }
        Ok(())
    }

    fn check_bundle(&self, bundle: &DatasetBundle) -> Result<()> {
        let roster = bundle.roster();
        if roster.sources() != self.sources.as_slice() || roster.target() != self.target {
            return Err(Error::Config(format!(
                "scenario lists sources {:?} → {}, dataset has {:?} → {}",
                self.sources,
                self.target,
                roster.sources(),
                roster.target()
            )));
        }
        if bundle.aspect() != self.aspect {
            return Err(Error::Config(format!(
                "scenario is {}-aspect, dataset was assembled as {}-aspect",
                self.aspect,
                bundle.aspect()
            )));
        }
        if bundle.qmatrix().n_concepts() != self.backbone.concepts {
            return Err(Error::Config(format!(
                "backbone has {} concepts, Q-matrix has {}",
                self.backbone.concepts,
                bundle.qmatrix().n_concepts()
            )));
        }
        Ok(())
    }
}

/// Loss summary of one pass over the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: Stage,
    pub epoch: usize,
    /// Domains visited, in order.
    pub domains: Vec<String>,
    pub steps: usize,
    pub train_loss: f64,
    pub holdout_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept (1-based; 0 = initial parameters).
    pub best_epoch: usize,
    pub steps: usize,
    /// Training records fed to the optimizer, per domain.
    pub records_seen: BTreeMap<String, usize>,
    pub metrics: Option<MetricReport>,
    /// Excluded from [`TrainReport::to_text`] so reports stay reproducible.
    #[serde(skip)]
    pub wall_time: Duration,
}

impl TrainReport {
    fn new(seed: u64) -> Self {
        Self {
            seed,
            epochs: Vec::new(),
            best_epoch: 0,
            steps: 0,
            records_seen: BTreeMap::new(),
            metrics: None,
            wall_time: Duration::ZERO,
        }
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }

    /// One line per epoch, then the metrics block.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            let _ = write!(
                out,
                "epoch stage={} n={} domains={} steps={} train_loss={:.9}",
                e.stage.as_str(),
                e.epoch,
                e.domains.join("|"),
                e.steps,
                e.train_loss
            );
            match e.holdout_loss {
                Some(l) => {
                    let _ = writeln!(out, " holdout_loss={l:.9}");
                }
                None => out.push('\n'),
            }
        }
        let _ = writeln!(out, "seed={} best_epoch={} steps={}", self.seed, self.best_epoch, self.steps);
        for (d, n) in &self.records_seen {
            let _ = writeln!(out, "records_seen {d}={n}");
        }
        if let Some(m) = &self.metrics {
            let _ = writeln!(out, "metrics {m}");
        }
        out
    }
}

/// `(fine-tune split, test split)` of the target records for `seed`.
pub fn finetune_split(bundle: &DatasetBundle, ratio: f64, seed: u64) -> Result<(Vec<InteractionRecord>, Vec<InteractionRecord>)> {
    split_finetune(bundle.target_records(), ratio, seed ^ SPLIT_SALT)
}

struct DomainData {
    domain: String,
    train: EncodedBatch,
    train_labels: Vec<f64>,
}

fn labels(records: &[InteractionRecord]) -> Vec<f64> {
    records.iter().map(InteractionRecord::label).collect()
}

/// Epoch loop shared by every stage: per-domain passes in order, seeded
/// shuffles, early stopping on the pooled held-out slices.
fn fit(
    model: &mut PromptCdModel,
    per_domain: Vec<(String, Vec<InteractionRecord>)>,
    epochs: usize,
    cfg: &TrainConfig,
    seed: u64,
    report: &mut TrainReport,
) -> Result<()> {
    let stage = model.stage();
    let mut domains = Vec::new();
    let mut holdout_records = Vec::new();
    for (domain, records) in per_domain {
        let (holdout, train) = split_finetune(&records, cfg.holdout, seed ^ HOLDOUT_SALT)?;
        holdout_records.extend(holdout);
        domains.push(DomainData {
            domain,
            train_labels: labels(&train),
            train: model.encode(&train)?,
        });
    }
    if domains.iter().all(|d| d.train.is_empty()) {
        return Ok(());
    }
    let holdout = model.encode(&holdout_records)?;
    let holdout_labels = labels(&holdout_records);
    let holdout_loss = |m: &PromptCdModel| -> Result<Option<f64>> {
        if holdout.is_empty() {
            return Ok(None);
        }
        Ok(Some(evaluate_loss(m, &holdout, &holdout_labels)?))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SHUFFLE_SALT);
    let mut best = (holdout_loss(model)?, model.params().clone(), 0usize);
    let mut stale = 0;
    for epoch in 1..=epochs {
        let mut total = 0.0;
        let mut seen = 0usize;
        let mut steps = 0;
        for d in &domains {
            let mut order: Vec<usize> = (0..d.train.len()).collect();
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let batch = d.train.slice(chunk);
                let y: Vec<f64> = chunk.iter().map(|&i| d.train_labels[i]).collect();
                let loss = train_step(model, &batch, &y, &cfg.adam)?;
                total += loss.value * chunk.len() as f64;
                seen += chunk.len();
                steps += 1;
                *report.records_seen.entry(d.domain.clone()).or_default() += chunk.len();
            }
        }
        let train_loss = total / seen.max(1) as f64;
        if !train_loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
        }
        let h = holdout_loss(model)?;
        report.steps += steps;
        report.epochs.push(EpochLog {
            stage,
            epoch,
            domains: domains.iter().map(|d| d.domain.clone()).collect(),
            steps,
            train_loss,
            holdout_loss: h,
        });
        match (h, best.0) {
            (Some(now), Some(prev)) if now < prev => {
                best = (h, model.params().clone(), epoch);
                stale = 0;
            }
            (Some(_), Some(_)) => {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
            _ => best = (None, model.params().clone(), epoch),
        }
    }
    report.best_epoch = best.2;
    *model.params_mut() = best.1;
    Ok(())
}

/// Trains a source-stage PromptCD model on every source domain.
pub fn pretrain(bundle: &DatasetBundle, spec: &ScenarioSpec, seed: u64) -> Result<(PromptCdModel, TrainReport)> {
    if !spec.variant.uses_prompts() {
        return Err(Error::Variant("pre-training needs ours or ours_plus; origin trains on the target only".into()));
    }
    pretrain_model(bundle, spec, spec.model_config(), seed)
}

/// The same source-stage training with the backbone alone (no prompts),
/// used as the no-prompt reference for embedding diagnostics.
pub fn pretrain_without_prompts(bundle: &DatasetBundle, spec: &ScenarioSpec, seed: u64) -> Result<(PromptCdModel, TrainReport)> {
    let config = ModelConfig {
        variant: Variant::Origin,
        ..spec.model_config()
    };
    pretrain_model(bundle, spec, config, seed)
}

fn pretrain_model(bundle: &DatasetBundle, spec: &ScenarioSpec, config: ModelConfig, seed: u64) -> Result<(PromptCdModel, TrainReport)> {
    spec.validate()?;
    spec.check_bundle(bundle)?;
    let start = Instant::now();
    let per_domain: Vec<(String, Vec<InteractionRecord>)> = spec
        .sources
        .iter()
        .map(|d| (d.clone(), bundle.records(d).to_vec()))
        .collect();
    if let Some((d, _)) = per_domain.iter().find(|(_, r)| r.is_empty()) {
        return Err(Error::Config(format!("source domain `{d}` has no records")));
    }
    let mut model = PromptCdModel::source(bundle, config, seed)?;
    let mut report = TrainReport::new(seed);
    fit(&mut model, per_domain, spec.train.pretrain_epochs, &spec.train, seed, &mut report)?;
    report.wall_time = start.elapsed();
    Ok((model, report))
}

/// Target-stage model at fine-tune step 0: prompts transferred, target
/// embeddings initialized for `spec.variant`.
pub fn prepare_target(pretrained: &PromptCdModel, bundle: &DatasetBundle, spec: &ScenarioSpec, seed: u64) -> Result<PromptCdModel> {
    spec.validate()?;
    spec.check_bundle(bundle)?;
    let have = pretrained.config();
    if have.backbone != spec.backbone || have.prompt_dim != spec.prompt_dim || have.aspect != spec.aspect {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} (P={}, {}-aspect), scenario asks for {} (P={}, {}-aspect)",
            have.backbone.kind, have.prompt_dim, have.aspect, spec.backbone.kind, spec.prompt_dim, spec.aspect
        )));
    }
    let mut model = pretrained.transfer_to_target(bundle, spec.variant, seed)?;
    for &g in &spec.train.frozen {
        model.params_mut().set_trainable(g, false);
    }
    Ok(model)
}

/// Transfers `pretrained` to the target, trains on the fine-tune split and
/// evaluates on the test split.
pub fn finetune(pretrained: &PromptCdModel, bundle: &DatasetBundle, spec: &ScenarioSpec, seed: u64) -> Result<(PromptCdModel, TrainReport)> {
    let start = Instant::now();
    let model = prepare_target(pretrained, bundle, spec, seed)?;
    let (model, mut report) = train_on_target(model, bundle, spec, seed)?;
    report.wall_time = start.elapsed();
    Ok((model, report))
}

/// The backbone alone, trained from scratch on the target fine-tune split.
pub fn train_origin(bundle: &DatasetBundle, spec: &ScenarioSpec, seed: u64) -> Result<(PromptCdModel, TrainReport)> {
    if spec.variant != Variant::Origin {
        return Err(Error::Variant(format!("train_origin runs the origin variant, not {}", spec.variant)));
    }
    spec.validate()?;
    spec.check_bundle(bundle)?;
    let start = Instant::now();
    let model = PromptCdModel::origin_target(bundle, spec.model_config(), seed)?;
    let (model, mut report) = train_on_target(model, bundle, spec, seed)?;
    report.wall_time = start.elapsed();
    Ok((model, report))
}

fn train_on_target(mut model: PromptCdModel, bundle: &DatasetBundle, spec: &ScenarioSpec, seed: u64) -> Result<(PromptCdModel, TrainReport)> {
    let (train, test) = finetune_split(bundle, spec.ratio, seed)?;
    let mut report = TrainReport::new(seed);
    fit(
        &mut model,
        vec![(spec.target.clone(), train)],
        spec.train.finetune_epochs,
        &spec.train,
        seed,
        &mut report,
    )?;
    if !test.is_empty() {
        let preds = model.predict(&test)?;
        report.metrics = Some(MetricReport::compute(&preds, &labels(&test), DEFAULT_THRESHOLD)?);
    }
    Ok((model, report))
}
