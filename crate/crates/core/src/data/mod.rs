//! Interaction logs, Q-matrices, domain rosters and the overlapping /
//! non-overlapping entity partition, plus a seeded synthetic generator.

mod binning;
mod bundle;
mod qmatrix;
mod records;
mod roster;
mod split;
mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub use binning::{bin_by_average_score, bin_letter};
pub use bundle::{DatasetBundle, DenseIndex};
pub use qmatrix::QMatrix;
pub use records::{load_interactions, read_interactions, write_interactions, ColumnSchema, InteractionRecord};
pub use roster::{compute_partition, DomainRoster, EntityPartition};
pub use split::split_finetune;
pub use synth::{generate_synthetic, SynthConfig};

/// The two kinds of entity an interaction joins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Student,
    Exercise,
}

impl EntityKind {
    pub fn other(self) -> Self {
        match self {
            EntityKind::Student => EntityKind::Exercise,
            EntityKind::Exercise => EntityKind::Student,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Student => "student",
            EntityKind::Exercise => "exercise",
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "student" | "students" | "stu" => Ok(EntityKind::Student),
            "exercise" | "exercises" | "exer" | "item" => Ok(EntityKind::Exercise),
            other => Err(Error::Config(format!("unknown entity kind `{other}`"))),
        }
    }
}

/// Which side of the data differs between domains.
///
/// Student-aspect transfer (cross-school) shares exercises between domains,
/// so exercises are the overlapping kind and students carry the per-domain
/// shared prompt. Exercise-aspect transfer (cross-subject) is the mirror image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    Student,
    Exercise,
}

impl Aspect {
    /// Entity kind whose members overlap across domains and get personalized prompts.
    pub fn overlap_kind(self) -> EntityKind {
        match self {
            Aspect::Student => EntityKind::Exercise,
            Aspect::Exercise => EntityKind::Student,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Aspect::Student => "student",
            Aspect::Exercise => "exercise",
        }
    }
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Aspect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "s" | "student" | "student_aspect" | "promptcd-s" => Ok(Aspect::Student),
            "e" | "exercise" | "exercise_aspect" | "promptcd-e" => Ok(Aspect::Exercise),
            other => Err(Error::Config(format!("unknown aspect `{other}`"))),
        }
    }
}
