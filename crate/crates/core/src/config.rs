//! Flat `key = value` experiment configuration.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are skipped.
//! Lists are comma-separated. Relative data paths resolve against the
//! directory of the config file. Unknown keys are rejected.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::backbones::{BackboneConfig, BackboneKind};
use crate::data::{generate_synthetic, load_interactions, Aspect, ColumnSchema, DatasetBundle, QMatrix, SynthConfig};
use crate::error::{Error, Result};
use crate::grad::ParamGroup;
use crate::prompt::Variant;
use crate::recommend::RecommendConfig;
use crate::training::{ScenarioSpec, TrainConfig};

/// Interaction and Q-matrix files with their roster.
#[derive(Debug, Clone, PartialEq)]
pub struct FileData {
    pub interactions: PathBuf,
    pub qmatrix: PathBuf,
    pub sources: Vec<String>,
    pub target: String,
    pub schema: ColumnSchema,
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub aspect: Aspect,
    pub synth: SynthConfig,
    /// When set, data comes from files instead of the generator.
    pub files: Option<FileData>,
    pub variants: Vec<Variant>,
    pub backbones: Vec<BackboneKind>,
    /// `None` is the backbone's default prompt width.
    pub prompt_dims: Vec<Option<usize>>,
    pub ratios: Vec<f64>,
    pub seeds: Vec<u64>,
    pub latent_dim: Option<usize>,
    pub hidden: Option<Vec<usize>>,
    pub train: TrainConfig,
    pub recommend: RecommendConfig,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        Self {
            name: "benchmark".into(),
            aspect: synth.aspect,
            synth,
            files: None,
            variants: Variant::ALL.to_vec(),
            backbones: vec![BackboneKind::Irt],
            prompt_dims: vec![None],
            ratios: vec![0.2],
            seeds: vec![0, 1, 2, 3, 4],
            latent_dim: None,
            hidden: None,
            train: TrainConfig::default(),
            recommend: RecommendConfig::default(),
            out: PathBuf::from("runs"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected a boolean, got `{value}`"))),
    }
}

fn items(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let out: Vec<T> = items(value).map(|v| parse(key, v)).collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(Error::Config(format!("`{key}` is empty")));
    }
    Ok(out)
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses config text on top of the defaults.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set_in(key.trim(), value.trim(), base)?;
        }
        Ok(cfg)
    }

    /// Applies one setting; relative paths stay as given.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.set_in(key, value, Path::new(""))
    }

    fn files_mut(&mut self) -> &mut FileData {
        let synth = &self.synth;
        self.files.get_or_insert_with(|| FileData {
            interactions: PathBuf::new(),
            qmatrix: PathBuf::new(),
            sources: synth.source_ids(),
            target: synth.target_id(),
            schema: ColumnSchema::default(),
            strict: true,
        })
    }

    fn set_in(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let s = &mut self.synth;
        match key {
            "name" => self.name = value.to_string(),
            "aspect" => {
                self.aspect = parse(key, value)?;
                self.synth.aspect = self.aspect;
            }
            "synth.sources" => s.n_sources = parse(key, value)?,
            "synth.overlap" => s.overlap_entities = parse(key, value)?,
            "synth.unique" => s.unique_entities_per_domain = parse(key, value)?,
            "synth.other" => s.other_entities_per_domain = parse(key, value)?,
            "synth.share_other" => s.share_other_entities = parse_bool(key, value)?,
            "synth.concepts" => s.concepts = parse(key, value)?,
            "synth.max_concepts" => s.max_concepts_per_exercise = parse(key, value)?,
            "synth.shift" => s.shift = parse(key, value)?,
            "synth.records_per_entity" => s.records_per_entity = parse(key, value)?,
            "data.interactions" => self.files_mut().interactions = base.join(value),
            "data.qmatrix" => self.files_mut().qmatrix = base.join(value),
            "data.sources" => self.files_mut().sources = parse_list(key, value)?,
            "data.target" => self.files_mut().target = value.to_string(),
            "data.strict" => self.files_mut().strict = parse_bool(key, value)?,
            "data.delimiter" => {
                let d = match value {
                    "tab" | "\\t" => b'\t',
                    v if v.len() == 1 => v.as_bytes()[0],
                    _ => return Err(Error::Config(format!("`{key}` must be one character or `tab`"))),
                };
                self.files_mut().schema.delimiter = d;
            }
            "data.student_column" => self.files_mut().schema.student = value.to_string(),
            "data.exercise_column" => self.files_mut().schema.exercise = value.to_string(),
            "data.score_column" => self.files_mut().schema.score = value.to_string(),
            "data.domain_column" => self.files_mut().schema.domain = value.to_string(),
            "variants" => self.variants = parse_list(key, value)?,
            "backbones" => self.backbones = parse_list(key, value)?,
            "prompt_dims" => {
                self.prompt_dims = items(value)
                    .map(|v| if v == "default" { Ok(None) } else { parse(key, v).map(Some) })
                    .collect::<Result<_>>()?;
                if self.prompt_dims.is_empty() {
                    return Err(Error::Config(format!("`{key}` is empty")));
                }
            }
            "ratios" => self.ratios = parse_list(key, value)?,
            "seeds" => self.seeds = parse_seeds(key, value)?,
            "backbone.latent_dim" => self.latent_dim = Some(parse(key, value)?),
            "backbone.hidden" => self.hidden = Some(items(value).map(|v| parse(key, v)).collect::<Result<_>>()?),
            "train.lr" => self.train.adam.lr = parse(key, value)?,
            "train.beta1" => self.train.adam.beta1 = parse(key, value)?,
            "train.beta2" => self.train.adam.beta2 = parse(key, value)?,
            "train.eps" => self.train.adam.eps = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.pretrain_epochs" => self.train.pretrain_epochs = parse(key, value)?,
            "train.finetune_epochs" => self.train.finetune_epochs = parse(key, value)?,
            "train.patience" => self.train.patience = parse(key, value)?,
            "train.holdout" => self.train.holdout = parse(key, value)?,
            "train.freeze" => {
                self.train.frozen = items(value).map(str::parse::<ParamGroup>).collect::<Result<_>>()?;
            }
            "recommend.k" => self.recommend.k_out = parse(key, value)?,
            "recommend.pool" => self.recommend.pool_size = Some(parse(key, value)?),
            "recommend.threshold" => self.recommend.mastery_threshold = parse(key, value)?,
            "recommend.band" => self.recommend.difficulty_band = parse(key, value)?,
            "recommend.domain" => self.recommend.domain = Some(value.to_string()),
            "out" => self.out = base.join(value),
            _ => return Err(Error::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Loads or generates the dataset for `seed`. Generated data use the
    /// run seed; file data ignore it.
    pub fn dataset(&self, seed: u64) -> Result<DatasetBundle> {
        match &self.files {
            None => generate_synthetic(&self.synth, seed),
            Some(f) => {
                if f.interactions.as_os_str().is_empty() || f.qmatrix.as_os_str().is_empty() {
                    return Err(Error::Config(
                        "file data need both data.interactions and data.qmatrix".into(),
                    ));
                }
                let records = load_interactions(&f.interactions, &f.schema)?;
                let q = QMatrix::load(&f.qmatrix)?;
                DatasetBundle::assemble(records, q, f.sources.clone(), f.target.clone(), self.aspect, f.strict)
            }
        }
    }

    pub fn roster(&self) -> (Vec<String>, String) {
        match &self.files {
            None => (self.synth.source_ids(), self.synth.target_id()),
            Some(f) => (f.sources.clone(), f.target.clone()),
        }
    }

    /// The scenario for one point of the sweep. `concepts` is the dataset's
    /// Q-matrix width.
    pub fn scenario(
        &self,
        backbone: BackboneKind,
        prompt_dim: Option<usize>,
        ratio: f64,
        variant: Variant,
        concepts: usize,
    ) -> ScenarioSpec {
        let mut b = BackboneConfig::new(backbone, concepts);
        if let Some(d) = self.latent_dim {
            if backbone != BackboneKind::Irt && backbone != BackboneKind::Ncdm {
                b = b.with_latent_dim(d);
            }
        }
        if let Some(h) = &self.hidden {
            if matches!(backbone, BackboneKind::Ncdm | BackboneKind::Kscd) {
                b = b.with_hidden(h.clone());
            }
        }
        let (sources, target) = self.roster();
        ScenarioSpec {
            name: self.name.clone(),
            aspect: self.aspect,
            variant,
            backbone: b,
            prompt_dim: prompt_dim.unwrap_or(backbone.default_prompt_dim()),
            sources,
            target,
            ratio,
            seeds: self.seeds.clone(),
            train: self.train.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() || self.backbones.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("variants, backbones and seeds must be non-empty".into()));
        }
        if let Some(r) = self.ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Config(format!("ratio {r} is outside [0, 1]")));
        }
        if self.prompt_dims.contains(&Some(0)) && self.variants.iter().any(|v| v.uses_prompts()) {
            return Err(Error::Config("prompt_dims must be positive".into()));
        }
        self.recommend.validate()
    }

    /// Canonical `key = value` listing of every setting.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let s = &self.synth;
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("name", self.name.clone());
        put("aspect", self.aspect.to_string());
        match &self.files {
            None => {
                put("synth.sources", s.n_sources.to_string());
                put("synth.overlap", s.overlap_entities.to_string());
                put("synth.unique", s.unique_entities_per_domain.to_string());
                put("synth.other", s.other_entities_per_domain.to_string());
                put("synth.share_other", s.share_other_entities.to_string());
                put("synth.concepts", s.concepts.to_string());
                put("synth.max_concepts", s.max_concepts_per_exercise.to_string());
                put("synth.shift", s.shift.to_string());
                put("synth.records_per_entity", s.records_per_entity.to_string());
            }
            Some(f) => {
                put("data.interactions", f.interactions.display().to_string());
                put("data.qmatrix", f.qmatrix.display().to_string());
                put("data.sources", f.sources.join(","));
                put("data.target", f.target.clone());
                put("data.strict", f.strict.to_string());
                put("data.delimiter", (f.schema.delimiter as char).to_string());
                put("data.student_column", f.schema.student.clone());
                put("data.exercise_column", f.schema.exercise.clone());
                put("data.score_column", f.schema.score.clone());
                put("data.domain_column", f.schema.domain.clone());
            }
        }
        put("variants", join(&self.variants));
        put("backbones", join(&self.backbones));
        let dims: Vec<String> = self
            .prompt_dims
            .iter()
            .map(|d| d.map_or_else(|| "default".to_string(), |d| d.to_string()))
            .collect();
        put("prompt_dims", dims.join(","));
        put("ratios", join(&self.ratios));
        put("seeds", join(&self.seeds));
        if let Some(d) = self.latent_dim {
            put("backbone.latent_dim", d.to_string());
        }
        if let Some(h) = &self.hidden {
            put("backbone.hidden", join(h));
        }
        let t = &self.train;
        put("train.lr", t.adam.lr.to_string());
        put("train.beta1", t.adam.beta1.to_string());
        put("train.beta2", t.adam.beta2.to_string());
        put("train.eps", t.adam.eps.to_string());
        put("train.batch_size", t.batch_size.to_string());
        put("train.pretrain_epochs", t.pretrain_epochs.to_string());
        put("train.finetune_epochs", t.finetune_epochs.to_string());
        put("train.patience", t.patience.to_string());
        put("train.holdout", t.holdout.to_string());
        let frozen: Vec<&str> = t.frozen.iter().map(|g| g.as_str()).collect();
        put("train.freeze", frozen.join(","));
        let r = &self.recommend;
        put("recommend.k", r.k_out.to_string());
        put("recommend.pool", r.pool().to_string());
        put("recommend.threshold", r.mastery_threshold.to_string());
        put("recommend.band", r.difficulty_band.to_string());
        if let Some(d) = &r.domain {
            put("recommend.domain", d.clone());
        }
        put("out", self.out.display().to_string());
        out
    }
}

/// Seeds as a list, with `a..b` ranges (end exclusive) allowed.
fn parse_seeds(key: &str, value: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for item in items(value) {
        match item.split_once("..") {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (parse(key, a)?, parse(key, b)?);
                out.extend(a..b);
            }
            None => out.push(parse(key, item)?),
        }
    }
    if out.is_empty() {
        return Err(Error::Config(format!("`{key}` is empty")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_lists_and_ranges() {
        let text = "\
# sweep
variants = origin, ours_plus
backbones = irt,ncdm   # two
seeds = 0..3, 7
ratios = 0.1,0.3
prompt_dims = default,5
train.freeze = backbone,fusion
";
        let c = RunConfig::parse(text, Path::new("")).unwrap();
        assert_eq!(c.variants, vec![Variant::Origin, Variant::OursPlus]);
        assert_eq!(c.backbones, vec![BackboneKind::Irt, BackboneKind::Ncdm]);
        assert_eq!(c.seeds, vec![0, 1, 2, 7]);
        assert_eq!(c.ratios, vec![0.1, 0.3]);
        assert_eq!(c.prompt_dims, vec![None, Some(5)]);
        assert_eq!(c.train.frozen, vec![ParamGroup::Backbone, ParamGroup::Fusion]);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("train.learning_rate = 0.1", Path::new("")).unwrap_err();
        assert!(matches!(&err, Error::UnknownKey(k) if k == "train.learning_rate"));
        assert!(err.to_string().contains("train.learning_rate"));
        assert!(matches!(RunConfig::parse("seeds", Path::new("")), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("seeds = x", Path::new("")), Err(Error::Config(_))));
    }

    #[test]
    fn data_paths_resolve_against_the_config_directory() {
        let c = RunConfig::parse("data.interactions = a.csv\ndata.qmatrix = /abs/q.csv", Path::new("/cfg")).unwrap();
        let f = c.files.unwrap();
        assert_eq!(f.interactions, PathBuf::from("/cfg/a.csv"));
        assert_eq!(f.qmatrix, PathBuf::from("/abs/q.csv"));
        assert!(f.strict);
    }

    #[test]
    fn dump_round_trips() {
        let mut c = RunConfig::default();
        c.set("backbones", "mirt,kscd").unwrap();
        c.set("backbone.hidden", "32").unwrap();
        c.set("recommend.domain", "target").unwrap();
        let back = RunConfig::parse(&c.dump(), Path::new("")).unwrap();
        let mut expected = c.clone();
        expected.recommend.pool_size = Some(c.recommend.pool());
        assert_eq!(back, expected);
    }
}
