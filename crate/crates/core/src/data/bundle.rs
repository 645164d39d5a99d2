use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{compute_partition, Aspect, DomainRoster, EntityKind, EntityPartition, InteractionRecord, QMatrix};
use crate::error::{Error, Result};

/// Bijection between opaque ids and contiguous indices, ordered by id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct DenseIndex {
    ids: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl From<Vec<String>> for DenseIndex {
    fn from(ids: Vec<String>) -> Self {
        let lookup = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Self { ids, lookup }
    }
}

impl From<DenseIndex> for Vec<String> {
    fn from(index: DenseIndex) -> Self {
        index.ids
    }
}

impl DenseIndex {
    pub fn from_ids<'a>(ids: impl IntoIterator<Item = &'a String>) -> Self {
        let set: BTreeSet<&String> = ids.into_iter().collect();
        Self::from(set.into_iter().cloned().collect::<Vec<_>>())
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.lookup.get(id).copied()
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Everything a scenario needs: records grouped by domain, the roster, the
/// Q-matrix, the overlap partition for the aspect's kind, and dense indices.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    aspect: Aspect,
    records: BTreeMap<String, Vec<InteractionRecord>>,
    roster: DomainRoster,
    qmatrix: QMatrix,
    partition: EntityPartition,
    students: DenseIndex,
    exercises: DenseIndex,
}

impl DatasetBundle {
    /// Groups and validates records. In strict mode any record whose domain is
    /// not listed, or whose exercise has no Q row, fails the whole load with a
    /// count summary; otherwise such records are dropped.
    pub fn assemble(
        records: Vec<InteractionRecord>,
        qmatrix: QMatrix,
        sources: Vec<String>,
        target: String,
        aspect: Aspect,
        strict: bool,
    ) -> Result<Self> {
        let listed: BTreeSet<String> = sources.iter().cloned().chain([target.clone()]).collect();
        let mut unknown_domain = 0usize;
        let mut missing_q = BTreeSet::new();
        let mut dropped_q = 0usize;
        let mut kept = Vec::with_capacity(records.len());
        for r in records {
            r.validate()?;
            if !listed.contains(&r.domain_id) {
                unknown_domain += 1;
            } else if !qmatrix.contains(&r.exercise_id) {
                dropped_q += 1;
                missing_q.insert(r.exercise_id.clone());
            } else {
                kept.push(r);
            }
        }
        if strict && (unknown_domain > 0 || dropped_q > 0) {
            let mut parts = Vec::new();
            if unknown_domain > 0 {
                parts.push(format!("{unknown_domain} records name a domain outside the roster"));
            }
            if dropped_q > 0 {
                parts.push(format!(
                    "{dropped_q} records reference {} exercises without a Q row",
                    missing_q.len()
                ));
            }
            return Err(Error::Data(parts.join("; ")));
        }

        let roster = DomainRoster::from_records(sources, target, &kept)?;
        let partition = compute_partition(&roster, aspect.overlap_kind())?;
        let students = DenseIndex::from_ids(kept.iter().map(|r| &r.student_id));
        let exercises = DenseIndex::from_ids(kept.iter().map(|r| &r.exercise_id));
        let mut grouped: BTreeMap<String, Vec<InteractionRecord>> =
            roster.domains().map(|d| (d.to_string(), Vec::new())).collect();
        for r in kept {
            grouped.get_mut(&r.domain_id).expect("listed domain").push(r);
        }
        Ok(Self {
            aspect,
            records: grouped,
            roster,
            qmatrix,
            partition,
            students,
            exercises,
        })
    }

    pub fn aspect(&self) -> Aspect {
        self.aspect
    }

    pub fn roster(&self) -> &DomainRoster {
        &self.roster
    }

    pub fn qmatrix(&self) -> &QMatrix {
        &self.qmatrix
    }

    pub fn partition(&self) -> &EntityPartition {
        &self.partition
    }

    pub fn index(&self, kind: EntityKind) -> &DenseIndex {
        match kind {
            EntityKind::Student => &self.students,
            EntityKind::Exercise => &self.exercises,
        }
    }

    pub fn records(&self, domain: &str) -> &[InteractionRecord] {
        self.records.get(domain).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn target_records(&self) -> &[InteractionRecord] {
        self.records(self.roster.target())
    }

    /// All records in domain order (sources first, then target).
    pub fn all_records(&self) -> Vec<InteractionRecord> {
        self.roster
            .domains()
            .flat_map(|d| self.records(d).iter().cloned())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.records.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q() -> QMatrix {
        let mut rows = BTreeMap::new();
        rows.insert("x".to_string(), vec![1, 0]);
        rows.insert("y".to_string(), vec![0, 1]);
        QMatrix::new(vec!["k0".into(), "k1".into()], rows).unwrap()
    }

    fn rec(s: &str, e: &str, d: &str) -> InteractionRecord {
        InteractionRecord::new(s, e, 1, d).unwrap()
    }

    #[test]
    fn assembles_and_indexes() {
        let b = DatasetBundle::assemble(
            vec![rec("a", "x", "s"), rec("b", "y", "s"), rec("a", "y", "t")],
            q(),
            vec!["s".into()],
            "t".into(),
            Aspect::Exercise,
            true,
        )
        .unwrap();
        assert_eq!(b.index(EntityKind::Student).get("b"), Some(1));
        assert_eq!(b.records("s").len(), 2);
        assert_eq!(b.partition().overlap.len(), 1);
        assert_eq!(b.target_records().len(), 1);
    }

    #[test]
    fn strict_mode_rejects_unknown_domains_and_q_rows() {
        let recs = vec![rec("a", "x", "s"), rec("a", "x", "zz"), rec("a", "w", "t"), rec("a", "x", "t")];
        let err = DatasetBundle::assemble(recs.clone(), q(), vec!["s".into()], "t".into(), Aspect::Exercise, true)
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("1 records name a domain"), "{msg}");
        assert!(msg.contains("1 records reference 1 exercises"), "{msg}");

        let lenient =
            DatasetBundle::assemble(recs, q(), vec!["s".into()], "t".into(), Aspect::Exercise, false).unwrap();
        assert_eq!(lenient.len(), 2);
    }
}
