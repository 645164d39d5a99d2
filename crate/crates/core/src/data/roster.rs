use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{EntityKind, InteractionRecord};
use crate::error::{Error, Result};

/// Source and target domains together with the entities each one contains.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainRoster {
    sources: Vec<String>,
    target: String,
    students: BTreeMap<String, BTreeSet<String>>,
    exercises: BTreeMap<String, BTreeSet<String>>,
}

impl DomainRoster {
    pub fn new(
        sources: Vec<String>,
        target: String,
        students: BTreeMap<String, BTreeSet<String>>,
        exercises: BTreeMap<String, BTreeSet<String>>,
    ) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::Config("at least one source domain is required".into()));
        }
        let unique: BTreeSet<&String> = sources.iter().collect();
        if unique.len() != sources.len() {
            return Err(Error::Config("duplicate source domain id".into()));
        }
        if unique.contains(&target) {
            return Err(Error::Config(format!("target `{target}` is also listed as a source")));
        }
        let mut roster = Self {
            sources,
            target,
            students,
            exercises,
        };
        for d in roster.domains().map(str::to_string).collect::<Vec<_>>() {
            roster.students.entry(d.clone()).or_default();
            roster.exercises.entry(d).or_default();
        }
        let known: BTreeSet<String> = roster.domains().map(str::to_string).collect();
        for d in roster.students.keys().chain(roster.exercises.keys()) {
            if !known.contains(d) {
                return Err(Error::Config(format!("universe given for unlisted domain `{d}`")));
            }
        }
        Ok(roster)
    }

    /// Builds universes from the records of the listed domains; records of
    /// other domains are ignored here (bundle assembly rejects them).
    pub fn from_records(sources: Vec<String>, target: String, records: &[InteractionRecord]) -> Result<Self> {
        let mut students: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut exercises: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let listed: BTreeSet<&str> = sources.iter().map(String::as_str).chain([target.as_str()]).collect();
        for r in records.iter().filter(|r| listed.contains(r.domain_id.as_str())) {
            students
                .entry(r.domain_id.clone())
                .or_default()
                .insert(r.student_id.clone());
            exercises
                .entry(r.domain_id.clone())
                .or_default()
                .insert(r.exercise_id.clone());
        }
        Self::new(sources, target, students, exercises)
    }

    pub fn sources(&self) -> &[String] {
        &self.sources
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    /// Sources in roster order, then the target.
    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.sources.iter().map(String::as_str).chain(std::iter::once(self.target.as_str()))
    }

    pub fn contains_domain(&self, domain: &str) -> bool {
        self.domains().any(|d| d == domain)
    }

    pub fn universe(&self, domain: &str, kind: EntityKind) -> Option<&BTreeSet<String>> {
        match kind {
            EntityKind::Student => self.students.get(domain),
            EntityKind::Exercise => self.exercises.get(domain),
        }
    }

    fn universe_or_empty(&self, domain: &str, kind: EntityKind) -> &BTreeSet<String> {
        static EMPTY: BTreeSet<String> = BTreeSet::new();
        self.universe(domain, kind).unwrap_or(&EMPTY)
    }

    /// Every entity of `kind` across all listed domains.
    pub fn all_entities(&self, kind: EntityKind) -> BTreeSet<String> {
        self.domains()
            .flat_map(|d| self.universe_or_empty(d, kind).iter().cloned())
            .collect()
    }
}

/// Overlapping set `O` and its complement `D` for one entity kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityPartition {
    pub kind: EntityKind,
    pub overlap: BTreeSet<String>,
    pub non_overlap: BTreeSet<String>,
}

impl EntityPartition {
    pub fn is_overlapping(&self, id: &str) -> bool {
        self.overlap.contains(id)
    }
}

/// `O` = (union of source universes) ∩ (target universe);
/// `D` = (union of all universes) \ `O`.
pub fn compute_partition(roster: &DomainRoster, kind: EntityKind) -> Result<EntityPartition> {
    for d in roster.domains() {
        if roster.universe_or_empty(d, kind).is_empty() {
            return Err(Error::Precondition(format!("domain `{d}` has no {kind}s")));
        }
    }
    let in_sources: BTreeSet<&String> = roster
        .sources()
        .iter()
        .flat_map(|d| roster.universe_or_empty(d, kind).iter())
        .collect();
    let in_target = roster.universe_or_empty(roster.target(), kind);
    let overlap: BTreeSet<String> = in_target
        .iter()
        .filter(|e| in_sources.contains(e))
        .cloned()
        .collect();
    let non_overlap = roster
        .all_entities(kind)
        .into_iter()
        .filter(|e| !overlap.contains(e))
        .collect();
    Ok(EntityPartition {
        kind,
        overlap,
        non_overlap,
    })
}
