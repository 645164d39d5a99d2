use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observed response: a student answered an exercise in a domain.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub student_id: String,
    pub exercise_id: String,
    pub score: u8,
    pub domain_id: String,
}

impl InteractionRecord {
    pub fn new(
        student_id: impl Into<String>,
        exercise_id: impl Into<String>,
        score: u8,
        domain_id: impl Into<String>,
    ) -> Result<Self> {
        let record = Self {
            student_id: student_id.into(),
            exercise_id: exercise_id.into(),
            score,
            domain_id: domain_id.into(),
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        if self.score > 1 {
            return Err(Error::Data(format!("score {} is not binary", self.score)));
        }
        for (name, id) in [
            ("student_id", &self.student_id),
            ("exercise_id", &self.exercise_id),
            ("domain_id", &self.domain_id),
        ] {
            if id.is_empty() {
                return Err(Error::Data(format!("empty {name}")));
            }
        }
        Ok(())
    }

    pub fn label(&self) -> f64 {
        f64::from(self.score)
    }
}

/// Column names of an interactions file. Defaults match the files written by
/// [`write_interactions`]; override them to read exports with other headers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSchema {
    pub student: String,
    pub exercise: String,
    pub score: String,
    pub domain: String,
    pub delimiter: u8,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            student: "student_id".into(),
            exercise: "exercise_id".into(),
            score: "score".into(),
            domain: "domain_id".into(),
            delimiter: b',',
        }
    }
}

/// Reads a delimited interactions file with a header row.
///
/// Row numbers in errors count data rows from 1 (the header is not counted).
/// An empty file yields an empty list.
pub fn load_interactions(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<Vec<InteractionRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_interactions(BufReader::new(file), schema)
}

pub fn read_interactions<R: Read>(reader: R, schema: &ColumnSchema) -> Result<Vec<InteractionRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);

    let headers = rdr
        .headers()
        .map_err(|e| Error::Data(format!("cannot read header: {e}")))?
        .clone();
    if headers.iter().all(|h| h.trim().is_empty()) {
        return Ok(Vec::new());
    }
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let student = column(&schema.student)?;
    let exercise = column(&schema.exercise)?;
    let score = column(&schema.score)?;
    let domain = column(&schema.domain)?;

    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::Row {
            row: row_no,
            message: e.to_string(),
        })?;
        let field = |idx: usize, name: &str| -> Result<String> {
            let value = row.get(idx).unwrap_or("").trim();
            if value.is_empty() {
                return Err(Error::Row {
                    row: row_no,
                    message: format!("empty {name}"),
                });
            }
            Ok(value.to_string())
        };
        let raw_score = field(score, "score")?;
        let score = parse_binary(&raw_score).ok_or_else(|| Error::Row {
            row: row_no,
            message: format!("score `{raw_score}` is not 0 or 1"),
        })?;
        out.push(InteractionRecord {
            student_id: field(student, "student id")?,
            exercise_id: field(exercise, "exercise id")?,
            score,
            domain_id: field(domain, "domain id")?,
        });
    }
    Ok(out)
}

fn parse_binary(raw: &str) -> Option<u8> {
    match raw {
        "0" => Some(0),
        "1" => Some(1),
        _ => match raw.parse::<f64>() {
            Ok(v) if v == 0.0 => Some(0),
            Ok(v) if v == 1.0 => Some(1),
            _ => None,
        },
    }
}

/// Writes records with the default header, in order.
pub fn write_interactions(path: impl AsRef<Path>, records: &[InteractionRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let wrap = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    wtr.write_record(["student_id", "exercise_id", "score", "domain_id"])
        .map_err(wrap)?;
    for r in records {
        wtr.write_record([
            r.student_id.as_str(),
            r.exercise_id.as_str(),
            if r.score == 1 { "1" } else { "0" },
            r.domain_id.as_str(),
        ])
        .map_err(wrap)?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}
