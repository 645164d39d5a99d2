//! Exercise recommendation from a trained model's diagnosis.
//!
//! Mastery and difficulty are read off the post-fusion representations:
//!
//! * NCDM: `σ(α_c)` and `σ(β_c)`.
//! * IRT: `σ(α)` and `σ(β)` broadcast over concepts.
//! * MIRT: `σ(αᵀu_c)` where `u_c` is the mean exercise vector of concept `c`
//!   in the domain, and `σ(D_v)` for difficulty.
//! * KSCD: `σ(w·(a_uc − a0_c))` and `σ(w·(e_vc − e0_c))`, where `w` is the
//!   `f_se` weight and `a0`, `e0` are the proficiency and difficulty vectors
//!   of an all-zero student and exercise.
//!
//! A zero representation therefore always reads as 0.5.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::backbones::BackboneKind;
use crate::data::{EntityKind, InteractionRecord};
use crate::error::{Error, Result};
use crate::grad::sigmoid;
use crate::model::{PromptCdModel, RepStage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendConfig {
    /// Maximum list length.
    pub k_out: usize,
    /// Candidate pool size; `5 · k_out` when unset.
    pub pool_size: Option<usize>,
    pub mastery_threshold: f64,
    /// Largest accepted `|difficulty − mastery|`.
    pub difficulty_band: f64,
    /// Domain to diagnose in; the target domain if the model has one for the
    /// student, otherwise the first domain the student appears in.
    pub domain: Option<String>,
}

impl Default for RecommendConfig {
    fn default() -> Self {
        Self {
            k_out: 7,
            pool_size: None,
            mastery_threshold: 0.5,
            difficulty_band: 0.25,
            domain: None,
        }
    }
}

impl RecommendConfig {
    pub fn pool(&self) -> usize {
        self.pool_size.unwrap_or(5 * self.k_out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pool() < self.k_out {
            return Err(Error::Config(format!(
                "pool size {} is smaller than the list size {}",
                self.pool(),
                self.k_out
            )));
        }
        if !(0.0..=1.0).contains(&self.mastery_threshold) {
            return Err(Error::Config("mastery_threshold must lie in [0, 1]".into()));
        }
        if !(self.difficulty_band >= 0.0) {
            return Err(Error::Config("difficulty_band must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub concept: String,
    pub exercise: String,
    pub mastery: f64,
    pub difficulty: f64,
    /// Observed score on the exercise, when labels were supplied.
    pub true_performance: Option<f64>,
}

impl Recommendation {
    pub fn gap(&self) -> f64 {
        (self.difficulty - self.mastery).abs()
    }
}

/// A student's mastery over every concept, in Q-matrix column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub student: String,
    pub domain: String,
    pub concepts: Vec<String>,
    pub mastery: Vec<f64>,
}

/// Reads concept-level quantities off a model for one domain.
struct Reader<'a> {
    model: &'a PromptCdModel,
    domain: String,
    kind: BackboneKind,
    exercises: Vec<String>,
    // KSCD: f_se weights, concept embeddings, zero-student and zero-exercise vectors
    kscd: Option<Kscd>,
    // MIRT: mean exercise vector per concept
    concept_dirs: Vec<Vec<f64>>,
}

struct Kscd {
    nets: crate::backbones::KscdNets,
    h: Vec<Vec<f64>>,
    a0: Vec<Vec<f64>>,
    e0: Vec<Vec<f64>>,
}

impl<'a> Reader<'a> {
    fn new(model: &'a PromptCdModel, domain: &str) -> Result<Self> {
        let exercises: Vec<String> = model
            .layout()
            .slots(EntityKind::Exercise)
            .iter()
            .filter(|s| s.domain == domain)
            .map(|s| s.id.clone())
            .collect();
        let kind = model.config().backbone.kind;
        let d = model.config().backbone.embed_dim();
        let k = model.layout().qmatrix.n_concepts();
        let kscd = model.kscd_nets().map(|(nets, h)| {
            let zero = vec![0.0; d];
            let a0 = h.iter().map(|hc| nets.proficiency(&zero, hc)).collect();
            let e0 = h.iter().map(|hc| nets.difficulty(&zero, hc)).collect();
            Kscd { nets, h, a0, e0 }
        });
        let mut concept_dirs = Vec::new();
        if kind == BackboneKind::Mirt {
            let mut sums = vec![vec![0.0; d]; k];
            let mut counts = vec![0usize; k];
            for ex in &exercises {
                let beta = model.representation(EntityKind::Exercise, domain, ex, RepStage::Out)?;
                for c in active(model, ex)? {
                    sums[c].iter_mut().zip(&beta).for_each(|(s, b)| *s += b);
                    counts[c] += 1;
                }
            }
            for (s, n) in sums.iter_mut().zip(counts) {
                if n > 0 {
                    s.iter_mut().for_each(|x| *x /= n as f64);
                }
            }
            concept_dirs = sums;
        }
        Ok(Self {
            model,
            domain: domain.to_string(),
            kind,
            exercises,
            kscd,
            concept_dirs,
        })
    }

    fn mastery(&self, student: &str) -> Result<Vec<f64>> {
        let alpha = self
            .model
            .representation(EntityKind::Student, &self.domain, student, RepStage::Out)?;
        let k = self.model.layout().qmatrix.n_concepts();
        Ok(match self.kind {
            BackboneKind::Ncdm => alpha.iter().map(|&a| sigmoid(a)).collect(),
            BackboneKind::Irt => vec![sigmoid(alpha[0]); k],
            BackboneKind::Mirt => self.concept_dirs.iter().map(|u| sigmoid(dot(&alpha, u))).collect(),
            BackboneKind::Kscd => {
                let s = self.kscd.as_ref().expect("kscd nets");
                (0..k)
                    .map(|c| {
                        let a = s.nets.proficiency(&alpha, &s.h[c]);
                        sigmoid(s.nets.interaction(&a, &s.a0[c]) - s.nets.interaction(&s.a0[c], &s.a0[c]))
                    })
                    .collect()
            }
        })
    }

    fn difficulty(&self, exercise: &str, concept: usize) -> Result<f64> {
        let beta = self
            .model
            .representation(EntityKind::Exercise, &self.domain, exercise, RepStage::Out)?;
        Ok(match self.kind {
            BackboneKind::Ncdm => sigmoid(beta[concept]),
            BackboneKind::Irt => sigmoid(beta[0]),
            BackboneKind::Mirt => sigmoid(self.model.discrimination(&self.domain, exercise)?),
            BackboneKind::Kscd => {
                let s = self.kscd.as_ref().expect("kscd nets");
                let e = s.nets.difficulty(&beta, &s.h[concept]);
                // f_se(x − e0) − f_se(x − e) = w·(e − e0) for any x
                sigmoid(s.nets.interaction(&s.e0[concept], &s.e0[concept]) - s.nets.interaction(&s.e0[concept], &e))
            }
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn active(model: &PromptCdModel, exercise: &str) -> Result<Vec<usize>> {
    let q = model
        .qrow(exercise)
        .ok_or_else(|| Error::Lookup(format!("exercise `{exercise}` has no Q-matrix row")))?;
    Ok(q.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(c, _)| c).collect())
}

fn resolve_domain(model: &PromptCdModel, student: &str, requested: Option<&str>) -> Result<String> {
    let domains: BTreeSet<&str> = model
        .layout()
        .slots(EntityKind::Student)
        .iter()
        .filter(|s| s.id == student)
        .map(|s| s.domain.as_str())
        .collect();
    if domains.is_empty() {
        return Err(Error::Lookup(format!("unknown student `{student}`")));
    }
    if let Some(d) = requested {
        return if domains.contains(d) {
            Ok(d.to_string())
        } else {
            Err(Error::Lookup(format!("student `{student}` has no embedding in domain `{d}`")))
        };
    }
    let target = model.layout().target.as_str();
    if domains.contains(target) {
        return Ok(target.to_string());
    }
    let first = model
        .layout()
        .domains()
        .into_iter()
        .find(|d| domains.contains(d))
        .unwrap_or_else(|| domains.iter().next().expect("non-empty"));
    Ok(first.to_string())
}

pub fn diagnose(model: &PromptCdModel, student: &str, domain: Option<&str>) -> Result<Diagnosis> {
    let domain = resolve_domain(model, student, domain)?;
    let reader = Reader::new(model, &domain)?;
    Ok(Diagnosis {
        student: student.to_string(),
        mastery: reader.mastery(student)?,
        concepts: model.layout().qmatrix.concepts().to_vec(),
        domain,
    })
}

/// One pool candidate: an exercise and its difficulty on each unmastered
/// concept it covers.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub exercise: String,
    pub difficulty: BTreeMap<usize, f64>,
}

/// Every exercise of the diagnosed domain that covers an unmastered
/// concept, with its difficulty on each such concept.
pub fn candidates(model: &PromptCdModel, diagnosis: &Diagnosis, threshold: f64) -> Result<Vec<Candidate>> {
    let reader = Reader::new(model, &diagnosis.domain)?;
    let mut out = Vec::new();
    for ex in &reader.exercises {
        let mut difficulty = BTreeMap::new();
        for c in active(model, ex)? {
            if diagnosis.mastery[c] < threshold {
                difficulty.insert(c, reader.difficulty(ex, c)?);
            }
        }
        if !difficulty.is_empty() {
            out.push(Candidate {
                exercise: ex.clone(),
                difficulty,
            });
        }
    }
    Ok(out)
}

/// The `n` candidates whose best `|difficulty − mastery|` is smallest, ties
/// by exercise id.
pub fn rank_pool(mastery: &[f64], mut candidates: Vec<Candidate>, n: usize) -> Vec<Candidate> {
    let best = |c: &Candidate| {
        c.difficulty
            .iter()
            .map(|(&k, &d)| (d - mastery[k]).abs())
            .fold(f64::INFINITY, f64::min)
    };
    candidates.sort_by(|a, b| best(a).total_cmp(&best(b)).then_with(|| a.exercise.cmp(&b.exercise)));
    candidates.truncate(n);
    candidates
}

/// Picks from a ranked pool.
///
/// Each unmastered concept takes the pool exercise closest to its mastery
/// (ties by id). Concepts are served in order of that gap; a concept whose
/// best exercise is already taken is skipped, and items outside the
/// difficulty band are dropped.
pub fn select(diagnosis: &Diagnosis, pool: &[Candidate], config: &RecommendConfig) -> Vec<Recommendation> {
    let concepts: BTreeSet<usize> = pool
        .iter()
        .flat_map(|c| c.difficulty.keys().copied())
        .filter(|&c| diagnosis.mastery[c] < config.mastery_threshold)
        .collect();
    let mut picks: Vec<Recommendation> = Vec::new();
    for c in concepts {
        let mastery = diagnosis.mastery[c];
        let best = pool
            .iter()
            .filter_map(|cand| cand.difficulty.get(&c).map(|&d| (cand, d)))
            .min_by(|a, b| {
                (a.1 - mastery)
                    .abs()
                    .total_cmp(&(b.1 - mastery).abs())
                    .then_with(|| a.0.exercise.cmp(&b.0.exercise))
            });
        if let Some((cand, difficulty)) = best {
            picks.push(Recommendation {
                concept: diagnosis.concepts[c].clone(),
                exercise: cand.exercise.clone(),
                mastery,
                difficulty,
                true_performance: None,
            });
        }
    }
    picks.sort_by(|a, b| {
        a.gap()
            .total_cmp(&b.gap())
            .then_with(|| a.exercise.cmp(&b.exercise))
            .then_with(|| a.concept.cmp(&b.concept))
    });
    let mut used = BTreeSet::new();
    let mut out = Vec::new();
    for r in picks {
        if out.len() == config.k_out {
            break;
        }
        if r.gap() > config.difficulty_band || !used.insert(r.exercise.clone()) {
            continue;
        }
        out.push(r);
    }
    out
}

/// Diagnoses `student`, builds the candidate pool and selects up to `k_out`
/// exercises, at most one per concept.
pub fn recommend(model: &PromptCdModel, student: &str, config: &RecommendConfig) -> Result<Vec<Recommendation>> {
    config.validate()?;
    let diagnosis = diagnose(model, student, config.domain.as_deref())?;
    let all = candidates(model, &diagnosis, config.mastery_threshold)?;
    let pool = rank_pool(&diagnosis.mastery, all, config.pool());
    Ok(select(&diagnosis, &pool, config))
}

/// Fills `true_performance` with the student's mean observed score on each
/// recommended exercise, where one exists.
pub fn attach_outcomes(recs: &mut [Recommendation], student: &str, records: &[InteractionRecord]) {
    for r in recs {
        let scores: Vec<f64> = records
            .iter()
            .filter(|x| x.student_id == student && x.exercise_id == r.exercise)
            .map(InteractionRecord::label)
            .collect();
        r.true_performance = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
    }
}

/// Table listing with a header line; values to four decimals.
pub struct RecommendationTable<'a>(pub &'a [Recommendation]);

impl fmt::Display for RecommendationTable<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "concept,exercise,mastery,difficulty,true_performance")?;
        for r in self.0 {
            let truth = r.true_performance.map_or_else(String::new, |t| format!("{t:.4}"));
            writeln!(f, "{},{},{:.4},{:.4},{}", r.concept, r.exercise, r.mastery, r.difficulty, truth)?;
        }
        Ok(())
    }
}
