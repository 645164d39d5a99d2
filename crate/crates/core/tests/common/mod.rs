//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use promptcd::backbones::{BackboneConfig, BackboneKind};
use promptcd::data::{generate_synthetic, Aspect, DatasetBundle, DomainRoster, EntityKind, EntityPartition, SynthConfig};
use promptcd::grad::{evaluate_loss, Differentiable, Session};
use promptcd::model::{EncodedBatch, ModelConfig, PromptCdModel};
use promptcd::prompt::Variant;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Central finite differences against the analytic gradient on a sample of
/// coordinates. Returns `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`
/// over the sampled coordinates (0 when both vanish).
pub fn fd_relative_error<M>(model: &mut M, batch: &M::Batch, labels: &[f64], h: f64, per_tensor: usize, seed: u64) -> f64
where
    M: Differentiable,
{
    let mut session = Session::new();
    let loss = session.forward(model, batch, labels).unwrap();
    session.backward(model, &loss).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::new();
    for (t, tensor) in model.params().iter().enumerate() {
        if tensor.is_empty() {
            continue;
        }
        let active: Vec<usize> = (0..tensor.len()).filter(|&i| tensor.grad[i] != 0.0).collect();
        for _ in 0..per_tensor {
            // half the picks from coordinates on the active path, half anywhere
            let i = if !active.is_empty() && rng.random::<bool>() {
                *active.choose(&mut rng).unwrap()
            } else {
                rng.random_range(0..tensor.len())
            };
            coords.push((t, i));
        }
    }

    let analytic: Vec<f64> = coords
        .iter()
        .map(|&(t, i)| model.params().iter().nth(t).unwrap().grad[i])
        .collect();
    let mut numeric = Vec::with_capacity(coords.len());
    for &(t, i) in &coords {
        let original = model.params().iter().nth(t).unwrap().values[i];
        set(model, t, i, original + h);
        let up = evaluate_loss(model, batch, labels).unwrap();
        set(model, t, i, original - h);
        let down = evaluate_loss(model, batch, labels).unwrap();
        set(model, t, i, original);
        numeric.push((up - down) / (2.0 * h));
    }
    relative_error(&analytic, &numeric)
}

fn set<M: Differentiable>(model: &mut M, t: usize, i: usize, v: f64) {
    model.params_mut().iter_mut().nth(t).unwrap().values[i] = v;
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-12 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// O(n²) pairwise AUC: concordant pairs count 1, tied pairs ½.
pub fn pairwise_auc(preds: &[f64], labels: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &yi) in labels.iter().enumerate() {
        if yi != 1.0 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj != 0.0 {
                continue;
            }
            den += 1.0;
            if preds[i] > preds[j] {
                num += 1.0;
            } else if preds[i] == preds[j] {
                num += 0.5;
            }
        }
    }
    num / den
}

/// Overlap and complement by brute-force enumeration of every entity.
pub fn brute_force_partition(roster: &DomainRoster, kind: EntityKind) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut everything = BTreeSet::new();
    for d in roster.domains() {
        everything.extend(roster.universe(d, kind).unwrap().iter().cloned());
    }
    let mut overlap = BTreeSet::new();
    let mut rest = BTreeSet::new();
    for e in everything {
        let in_source = roster
            .sources()
            .iter()
            .any(|s| roster.universe(s, kind).unwrap().contains(&e));
        let in_target = roster.universe(roster.target(), kind).unwrap().contains(&e);
        if in_source && in_target {
            overlap.insert(e);
        } else {
            rest.insert(e);
        }
    }
    (overlap, rest)
}

pub fn partition_laws_hold(p: &EntityPartition, universe: &BTreeSet<String>) -> bool {
    p.overlap.is_disjoint(&p.non_overlap) && p.overlap.union(&p.non_overlap).cloned().collect::<BTreeSet<_>>() == *universe
}

/// A dataset small enough for finite differences, with private entities of
/// the overlapping kind so both fusion maps are exercised.
pub fn tiny_bundle(aspect: Aspect, seed: u64) -> DatasetBundle {
    let cfg = SynthConfig {
        aspect,
        n_sources: 2,
        overlap_entities: 4,
        unique_entities_per_domain: 2,
        other_entities_per_domain: 5,
        concepts: 3,
        max_concepts_per_exercise: 2,
        records_per_entity: 3,
        ..SynthConfig::default()
    };
    generate_synthetic(&cfg, seed).unwrap()
}

pub fn tiny_backbone(kind: BackboneKind) -> BackboneConfig {
    let cfg = BackboneConfig::new(kind, 3);
    match kind {
        BackboneKind::Irt | BackboneKind::Ncdm => cfg.with_hidden(if kind == BackboneKind::Ncdm { vec![6, 4] } else { vec![] }),
        BackboneKind::Mirt => cfg.with_latent_dim(3),
        BackboneKind::Kscd => cfg.with_latent_dim(3).with_hidden(vec![5]),
    }
}

/// Which computation path of the model an instance exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Path {
    /// Backbone and embeddings only.
    Origin,
    /// Source stage: personalized and per-domain shared prompts, both fusion maps.
    Source,
    /// Target stage with the transferred shared prompt.
    Target,
    /// Target stage with prompt-generated embeddings.
    TargetPlus,
}

pub const PATHS: [Path; 4] = [Path::Origin, Path::Source, Path::Target, Path::TargetPlus];

/// Builds a model on `path`, scrambles its parameters so nothing sits at its
/// initial symmetric point, and returns it with a batch and labels.
pub fn random_instance(kind: BackboneKind, path: Path, aspect: Aspect, seed: u64) -> (PromptCdModel, EncodedBatch, Vec<f64>) {
    let bundle = tiny_bundle(aspect, seed);
    let mut cfg = ModelConfig::new(tiny_backbone(kind), Variant::Ours, aspect);
    cfg.prompt_dim = 2;
    let mut model = match path {
        Path::Origin => PromptCdModel::origin_target(&bundle, cfg, seed).unwrap(),
        Path::Source => PromptCdModel::source(&bundle, cfg, seed).unwrap(),
        Path::Target => PromptCdModel::source(&bundle, cfg, seed)
            .unwrap()
            .transfer_to_target(&bundle, Variant::Ours, seed)
            .unwrap(),
        Path::TargetPlus => PromptCdModel::source(&bundle, cfg, seed)
            .unwrap()
            .transfer_to_target(&bundle, Variant::OursPlus, seed)
            .unwrap(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(7));
    let noise = Normal::new(0.0, 0.4).unwrap();
    for t in model.params_mut().iter_mut() {
        for v in t.values.iter_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    let records = match path {
        Path::Source => bundle.roster().sources().iter().flat_map(|d| bundle.records(d).to_vec()).collect::<Vec<_>>(),
        _ => bundle.target_records().to_vec(),
    };
    let picked: Vec<_> = records.choose_multiple(&mut rng, 24.min(records.len())).cloned().collect();
    let labels = picked.iter().map(|r| r.label()).collect();
    let batch = model.encode(&picked).unwrap();
    (model, batch, labels)
}
