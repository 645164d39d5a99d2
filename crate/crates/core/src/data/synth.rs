use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Aspect, DatasetBundle, EntityKind, InteractionRecord, QMatrix};
use crate::error::{Error, Result};

/// Desk-scale generator settings. Entities of the aspect's overlapping kind
/// are either common to every domain (`overlap_entities`) or private to one
/// (`unique_entities_per_domain`); entities of the other kind are private to
/// each domain unless `share_other_entities` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub aspect: Aspect,
    pub n_sources: usize,
    pub overlap_entities: usize,
    pub unique_entities_per_domain: usize,
    pub other_entities_per_domain: usize,
    pub share_other_entities: bool,
    pub concepts: usize,
    pub max_concepts_per_exercise: usize,
    /// Standard deviation of the per-domain logit offset.
    pub shift: f64,
    /// Responses drawn for every overlapping-kind entity in every domain it belongs to.
    pub records_per_entity: usize,
}

impl Default for SynthConfig {
    /// Two sources and one target, 200 shared students, 50 subject-specific
    /// exercises per domain, 8 concepts, unit shift; every student answers
    /// every exercise of a domain.
    fn default() -> Self {
        Self {
            aspect: Aspect::Exercise,
            n_sources: 2,
            overlap_entities: 200,
            unique_entities_per_domain: 0,
            other_entities_per_domain: 50,
            share_other_entities: false,
            concepts: 8,
            max_concepts_per_exercise: 3,
            shift: 1.0,
            records_per_entity: 50,
        }
    }
}

impl SynthConfig {
    pub fn source_ids(&self) -> Vec<String> {
        (1..=self.n_sources).map(|i| format!("source{i}")).collect()
    }

    pub fn target_id(&self) -> String {
        "target".to_string()
    }

    /// Total number of records `generate_synthetic` will emit.
    pub fn expected_records(&self) -> usize {
        (self.n_sources + 1) * (self.overlap_entities + self.unique_entities_per_domain) * self.records_per_entity
    }

    fn validate(&self) -> Result<()> {
        if self.n_sources == 0 {
            return Err(Error::Config("synthetic data needs at least one source domain".into()));
        }
        if self.concepts == 0 {
            return Err(Error::Config("synthetic data needs at least one concept".into()));
        }
        if self.max_concepts_per_exercise == 0 {
            return Err(Error::Config("exercises need at least one concept".into()));
        }
        if self.overlap_entities + self.unique_entities_per_domain == 0 || self.other_entities_per_domain == 0 {
            return Err(Error::Config("synthetic data needs entities of both kinds".into()));
        }
        if self.records_per_entity == 0 || self.records_per_entity > self.other_entities_per_domain {
            return Err(Error::Config(format!(
                "records_per_entity must be in 1..={}",
                self.other_entities_per_domain
            )));
        }
        if !(self.shift.is_finite() && self.shift >= 0.0) {
            return Err(Error::Config("shift must be a non-negative number".into()));
        }
        Ok(())
    }
}

struct Latent {
    id: String,
    // student ability or exercise difficulty per concept
    values: Vec<f64>,
    qrow: Option<Vec<u8>>,
}

struct Sampler {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
    concepts: usize,
    max_active: usize,
}

impl Sampler {
    fn entity(&mut self, kind: EntityKind, id: String) -> Latent {
        match kind {
            EntityKind::Student => Latent {
                id,
                values: (0..self.concepts).map(|_| self.normal.sample(&mut self.rng)).collect(),
                qrow: None,
            },
            EntityKind::Exercise => {
                let m = self.rng.random_range(1..=self.max_active.min(self.concepts));
                let mut qrow = vec![0u8; self.concepts];
                for c in rand::seq::index::sample(&mut self.rng, self.concepts, m).into_iter() {
                    qrow[c] = 1;
                }
                let values = qrow
                    .iter()
                    .map(|&q| if q == 1 { self.normal.sample(&mut self.rng) } else { 0.0 })
                    .collect();
                Latent {
                    id,
                    values,
                    qrow: Some(qrow),
                }
            }
        }
    }
}

fn entity_prefix(kind: EntityKind) -> char {
    match kind {
        EntityKind::Student => 's',
        EntityKind::Exercise => 'e',
    }
}

/// Draws an IRT-like dataset: students have abilities `θ ~ N(0, I_K)`,
/// exercises have difficulties `b ~ N(0, 1)` on their Q support, each domain
/// has an offset `δ ~ N(0, shift²)`, and a response is
/// `Bernoulli(σ(mean_{c ∈ Q}(θ_c − b_c) − δ))`. Overlapping entities keep
/// their latents across domains.
pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<DatasetBundle> {
    config.validate()?;
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(seed),
        normal: Normal::new(0.0, 1.0).expect("unit normal"),
        concepts: config.concepts,
        max_active: config.max_concepts_per_exercise,
    };
    let sources = config.source_ids();
    let target = config.target_id();
    let domains: Vec<String> = sources.iter().cloned().chain([target.clone()]).collect();

    let offsets: Vec<f64> = domains
        .iter()
        .map(|_| config.shift * s.normal.sample(&mut s.rng))
        .collect();

    let kind = config.aspect.overlap_kind();
    let other = kind.other();
    let shared: Vec<Latent> = (0..config.overlap_entities)
        .map(|i| s.entity(kind, format!("{}{i:04}", entity_prefix(kind))))
        .collect();
    let shared_other: Vec<Latent> = if config.share_other_entities {
        (0..config.other_entities_per_domain)
            .map(|i| s.entity(other, format!("{}{i:04}", entity_prefix(other))))
            .collect()
    } else {
        Vec::new()
    };

    let mut records = Vec::with_capacity(config.expected_records());
    let mut q_rows: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    let mut note_q = |l: &Latent| {
        if let Some(q) = &l.qrow {
            q_rows.entry(l.id.clone()).or_insert_with(|| q.clone());
        }
    };
    shared.iter().for_each(&mut note_q);
    shared_other.iter().for_each(&mut note_q);

    for (d, domain) in domains.iter().enumerate() {
        let unique: Vec<Latent> = (0..config.unique_entities_per_domain)
            .map(|i| s.entity(kind, format!("{domain}-{}{i:04}", entity_prefix(kind))))
            .collect();
        let private_other: Vec<Latent>;
        let partners: &[Latent] = if config.share_other_entities {
            &shared_other
        } else {
            private_other = (0..config.other_entities_per_domain)
                .map(|i| s.entity(other, format!("{domain}-{}{i:04}", entity_prefix(other))))
                .collect();
            &private_other
        };
        unique.iter().for_each(&mut note_q);
        partners.iter().for_each(&mut note_q);

        for entity in shared.iter().chain(unique.iter()) {
            let mut picks: Vec<usize> =
                rand::seq::index::sample(&mut s.rng, partners.len(), config.records_per_entity).into_vec();
            picks.sort_unstable();
            for p in picks {
                let partner = &partners[p];
                let (student, exercise) = match kind {
                    EntityKind::Student => (entity, partner),
                    EntityKind::Exercise => (partner, entity),
                };
                let qrow = exercise.qrow.as_ref().expect("exercise latent has a Q row");
                let active = qrow.iter().filter(|&&q| q == 1).count() as f64;
                let gap: f64 = qrow
                    .iter()
                    .zip(student.values.iter().zip(&exercise.values))
                    .filter(|(q, _)| **q == 1)
                    .map(|(_, (theta, b))| theta - b)
                    .sum::<f64>()
                    / active;
                let p_correct = 1.0 / (1.0 + (-(gap - offsets[d])).exp());
                let score = u8::from(s.rng.random::<f64>() < p_correct);
                records.push(InteractionRecord {
                    student_id: student.id.clone(),
                    exercise_id: exercise.id.clone(),
                    score,
                    domain_id: domain.clone(),
                });
            }
        }
    }

    let concepts = (0..config.concepts).map(|c| format!("c{c}")).collect();
    let q = QMatrix::new(concepts, q_rows)?;
    DatasetBundle::assemble(records, q, sources, target, config.aspect, true)
}
