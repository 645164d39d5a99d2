use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary exercise-by-concept incidence matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QMatrix {
    concepts: Vec<String>,
    rows: BTreeMap<String, Vec<u8>>,
}

impl QMatrix {
    pub fn new(concepts: Vec<String>, rows: BTreeMap<String, Vec<u8>>) -> Result<Self> {
        if concepts.is_empty() {
            return Err(Error::Config("Q-matrix needs at least one concept".into()));
        }
        let k = concepts.len();
        for (id, row) in &rows {
            if row.len() != k {
                return Err(Error::Data(format!(
                    "Q row for `{id}` has {} entries, expected {k}",
                    row.len()
                )));
            }
            if row.iter().any(|&v| v > 1) {
                return Err(Error::Data(format!("Q row for `{id}` is not binary")));
            }
            if !row.contains(&1) {
                return Err(Error::Data(format!("Q row for `{id}` has no concept")));
            }
        }
        Ok(Self { concepts, rows })
    }

    pub fn n_concepts(&self) -> usize {
        self.concepts.len()
    }

    pub fn concepts(&self) -> &[String] {
        &self.concepts
    }

    pub fn row(&self, exercise_id: &str) -> Option<&[u8]> {
        self.rows.get(exercise_id).map(Vec::as_slice)
    }

    pub fn contains(&self, exercise_id: &str) -> bool {
        self.rows.contains_key(exercise_id)
    }

    pub fn exercises(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Keeps only the listed exercises.
    pub fn restricted_to<'a>(&self, exercises: impl IntoIterator<Item = &'a str>) -> Self {
        let rows = exercises
            .into_iter()
            .filter_map(|id| self.rows.get(id).map(|r| (id.to_string(), r.clone())))
            .collect();
        Self {
            concepts: self.concepts.clone(),
            rows,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file))
    }

    /// Accepts two layouts, both with a header row:
    ///
    /// * `exercise_id,<c1>,<c2>,...` followed by one 0/1 column per concept;
    /// * `exercise_id,concepts` where the second field lists concept ids
    ///   separated by `;`.
    ///
    /// A two-column file is always read as the list layout.
    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Data(format!("cannot read Q-matrix header: {e}")))?
            .clone();
        if headers.len() < 2 {
            return Err(Error::Data("Q-matrix needs an exercise column and concept columns".into()));
        }
        let mut raw = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| Error::Row {
                row: i + 1,
                message: e.to_string(),
            })?;
            raw.push((i + 1, row));
        }

        if headers.len() == 2 {
            let mut listed = Vec::with_capacity(raw.len());
            let mut all = BTreeSet::new();
            for (row_no, row) in &raw {
                let id = row[0].trim().to_string();
                let cs: Vec<String> = row[1]
                    .split(';')
                    .map(|c| c.trim().to_string())
                    .filter(|c| !c.is_empty())
                    .collect();
                if id.is_empty() || cs.is_empty() {
                    return Err(Error::Row {
                        row: *row_no,
                        message: "empty exercise id or concept list".into(),
                    });
                }
                all.extend(cs.iter().cloned());
                listed.push((id, cs));
            }
            let mut concepts: Vec<String> = all.into_iter().collect();
            concepts.sort_by(|a, b| concept_order(a, b));
            let pos: BTreeMap<&str, usize> = concepts.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
            let mut rows = BTreeMap::new();
            for (id, cs) in listed {
                let mut r = vec![0u8; concepts.len()];
                for c in &cs {
                    r[pos[c.as_str()]] = 1;
                }
                insert_unique(&mut rows, id, r)?;
            }
            return Self::new(concepts, rows);
        }

        let concepts: Vec<String> = headers.iter().skip(1).map(|h| h.trim().to_string()).collect();
        let mut rows = BTreeMap::new();
        for (row_no, row) in raw {
            let id = row[0].trim().to_string();
            if id.is_empty() {
                return Err(Error::Row {
                    row: row_no,
                    message: "empty exercise id".into(),
                });
            }
            let r = row
                .iter()
                .skip(1)
                .map(|v| match v.trim() {
                    "0" => Ok(0u8),
                    "1" => Ok(1u8),
                    other => Err(Error::Row {
                        row: row_no,
                        message: format!("Q entry `{other}` is not 0 or 1"),
                    }),
                })
                .collect::<Result<Vec<u8>>>()?;
            insert_unique(&mut rows, id, r)?;
        }
        Self::new(concepts, rows)
    }

    /// Writes the binary-column layout.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let wrap = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
        let mut wtr = csv::Writer::from_path(path).map_err(wrap)?;
        let mut header = vec!["exercise_id".to_string()];
        header.extend(self.concepts.iter().cloned());
        wtr.write_record(&header).map_err(wrap)?;
        for (id, row) in &self.rows {
            let mut fields = vec![id.clone()];
            fields.extend(row.iter().map(|v| v.to_string()));
            wtr.write_record(&fields).map_err(wrap)?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))
    }
}

fn insert_unique(rows: &mut BTreeMap<String, Vec<u8>>, id: String, row: Vec<u8>) -> Result<()> {
    if rows.contains_key(&id) {
        return Err(Error::Data(format!("duplicate Q row for `{id}`")));
    }
    rows.insert(id, row);
    Ok(())
}

// numeric ids sort numerically, everything else lexicographically after them
fn concept_order(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        _ => a.cmp(b),
    }
}
