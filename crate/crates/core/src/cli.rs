//! The `promptcd` command line: `synth`, `run`, `eval`, `embed`, `recommend`.
//!
//! Settings come from `--config` (see [`crate::config`]), then `--set
//! key=value` pairs, then the dedicated flags; later sources win.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::backbones::BackboneKind;
use crate::config::RunConfig;
use crate::data::{write_interactions, DatasetBundle, EntityKind};
use crate::error::{Error, Result};
use crate::eval::{domain_clusters, export_embeddings, write_embeddings, MetricReport, DEFAULT_THRESHOLD};
use crate::model::{PromptCdModel, RepStage, Stage};
use crate::prompt::Variant;
use crate::recommend::{attach_outcomes, diagnose, recommend, RecommendationTable};
use crate::training::{finetune, finetune_split, pretrain, train_origin, TrainReport};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "promptcd", version, about = "Cross-domain cognitive diagnosis with transferable prompts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Config file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Seeds, comma-separated; `a..b` ranges allowed.
    #[arg(long)]
    pub seed: Option<String>,
    /// Variants: origin, ours, ours_plus.
    #[arg(long)]
    pub variant: Option<String>,
    /// Backbones: irt, mirt, ncdm, kscd.
    #[arg(long)]
    pub backbone: Option<String>,
    /// student or exercise.
    #[arg(long)]
    pub aspect: Option<String>,
    /// Fine-tune ratios.
    #[arg(long)]
    pub ratio: Option<String>,
    /// Prompt widths; `default` uses the backbone's.
    #[arg(long = "prompt-dim")]
    pub prompt_dim: Option<String>,
    /// Output directory (synth, run) or file (eval, embed, recommend).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and write it as files.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Pre-train, fine-tune and evaluate every configured combination.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on its target test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Export entity representations and their domain cluster distances.
    Embed {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// student or exercise.
        #[arg(long, default_value = "exercise")]
        kind: String,
        /// orig (before fusion) or out (after fusion).
        #[arg(long, default_value = "out")]
        stage: String,
    },
    /// List exercises for a student's unmastered concepts.
    Recommend {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        student: String,
        /// List length.
        #[arg(short = 'k', long)]
        k: Option<usize>,
        /// Add the student's observed scores from the configured data.
        #[arg(long)]
        with_outcomes: bool,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Run { .. } => "run",
            Command::Eval { .. } => "eval",
            Command::Embed { .. } => "embed",
            Command::Recommend { .. } => "recommend",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Synth { common }
            | Command::Run { common }
            | Command::Eval { common, .. }
            | Command::Embed { common, .. }
            | Command::Recommend { common, .. } => common,
        }
    }
}

/// Resolves the config: file, then `--set`, then flags.
pub fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    let flags = [
        ("seeds", &common.seed),
        ("variants", &common.variant),
        ("backbones", &common.backbone),
        ("aspect", &common.aspect),
        ("ratios", &common.ratio),
        ("prompt_dims", &common.prompt_dim),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs a parsed command line, writing human-readable output to `stdout`.
pub fn execute(cli: &Cli, stdout: &mut dyn std::io::Write) -> Result<()> {
    let common = cli.command.common();
    let cfg = resolve_config(common)?;
    match &cli.command {
        Command::Synth { .. } => cmd_synth(&cfg, common.config.as_deref(), stdout),
        Command::Run { .. } => cmd_run(&cfg, common.config.as_deref(), stdout),
        Command::Eval { checkpoint, .. } => cmd_eval(&cfg, checkpoint, common.out.as_deref(), stdout),
        Command::Embed {
            checkpoint, kind, stage, ..
        } => {
            let kind: EntityKind = kind.parse()?;
            let stage: RepStage = stage.parse()?;
            cmd_embed(checkpoint, kind, stage, common.out.as_deref(), stdout)
        }
        Command::Recommend {
            checkpoint,
            student,
            k,
            with_outcomes,
            ..
        } => {
            let mut cfg = cfg;
            if let Some(k) = k {
                cfg.recommend.k_out = *k;
                if cfg.recommend.pool_size.is_some_and(|p| p < *k) {
                    cfg.recommend.pool_size = None;
                }
            }
            cfg.recommend.validate()?;
            cmd_recommend(&cfg, checkpoint, student, *with_outcomes, common.out.as_deref(), stdout)
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match execute(&cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            let _ = lock.flush();
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn emit(stdout: &mut dyn std::io::Write, text: &str) -> Result<()> {
    stdout
        .write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

/// Flat key-value manifest, written before any result.
pub fn manifest(command: &str, cfg: &RunConfig, config_path: Option<&Path>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "command = {command}");
    let _ = writeln!(out, "version = {VERSION}");
    let _ = writeln!(
        out,
        "config = {}",
        config_path.map_or_else(|| "<defaults>".to_string(), |p| p.display().to_string())
    );
    let _ = writeln!(out, "output = {}", cfg.out.display());
    let seeds: Vec<String> = cfg.seeds.iter().map(u64::to_string).collect();
    let _ = writeln!(out, "resolved_seeds = {}", seeds.join(","));
    out.push_str("# resolved settings\n");
    out.push_str(&cfg.dump());
    out
}

fn cmd_synth(cfg: &RunConfig, config_path: Option<&Path>, stdout: &mut dyn std::io::Write) -> Result<()> {
    if cfg.files.is_some() {
        return Err(Error::Config("synth needs generator settings, not data files".into()));
    }
    let seed = cfg.seeds[0];
    create_dir(&cfg.out)?;
    write_text(&cfg.out.join("manifest.txt"), &manifest("synth", cfg, config_path))?;
    let bundle = cfg.dataset(seed)?;
    let records = bundle.all_records();
    write_interactions(cfg.out.join("interactions.csv"), &records)?;
    bundle.qmatrix().write(cfg.out.join("qmatrix.csv"))?;
    let (sources, target) = cfg.roster();
    let dataset = format!(
        "# written by promptcd synth, seed {seed}\naspect = {}\ndata.interactions = interactions.csv\ndata.qmatrix = qmatrix.csv\ndata.sources = {}\ndata.target = {target}\n",
        cfg.aspect,
        sources.join(",")
    );
    write_text(&cfg.out.join("dataset.conf"), &dataset)?;
    emit(
        stdout,
        &format!(
            "wrote {} records, {} exercises, {} concepts to {}\n",
            records.len(),
            bundle.qmatrix().len(),
            bundle.qmatrix().n_concepts(),
            cfg.out.display()
        ),
    )
}

/// One evaluated (scenario, variant, seed).
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub scenario: String,
    pub backbone: BackboneKind,
    pub prompt_dim: usize,
    pub ratio: f64,
    pub variant: Variant,
    pub seed: u64,
    pub metrics: MetricReport,
}

fn scenario_name(name: &str, backbone: BackboneKind, prompt_dim: usize, ratio: f64) -> String {
    format!("{name}-{backbone}-p{prompt_dim}-r{ratio}")
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `metrics.csv` content.
pub fn metrics_csv(rows: &[RunRow]) -> String {
    let mut out = String::from("scenario,backbone,prompt_dim,ratio,variant,seed,auc,acc,rmse,f1,n\n");
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{}",
            r.scenario, r.backbone, r.prompt_dim, r.ratio, r.variant, r.seed, m.auc, m.acc, m.rmse, m.f1, m.n
        );
    }
    out
}

/// `summary.csv` content: mean and sample standard deviation over seeds of
/// AUC, ACC, RMSE and F1 per scenario and variant.
pub fn summary_csv(rows: &[RunRow]) -> String {
    let mut groups: BTreeMap<(String, Variant), Vec<&RunRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.scenario.clone(), r.variant)).or_default().push(r);
    }
    let mut out = String::from(
        "scenario,backbone,prompt_dim,ratio,variant,seeds,auc_mean,auc_std,acc_mean,acc_std,rmse_mean,rmse_std,f1_mean,f1_std\n",
    );
    for ((scenario, variant), rs) in &groups {
        let first = rs[0];
        let _ = write!(
            out,
            "{scenario},{},{},{},{variant},{}",
            first.backbone,
            first.prompt_dim,
            first.ratio,
            rs.len()
        );
        for pick in [
            |m: &MetricReport| m.auc,
            |m: &MetricReport| m.acc,
            |m: &MetricReport| m.rmse,
            |m: &MetricReport| m.f1,
        ] {
            let xs: Vec<f64> = rs.iter().map(|r| pick(&r.metrics)).collect();
            let (mean, std) = mean_std(&xs);
            let _ = write!(out, ",{mean:.6},{std:.6}");
        }
        out.push('\n');
    }
    out
}

fn save_stage(dir: &Path, seed: u64, model: &PromptCdModel, report: &TrainReport) -> Result<()> {
    model.save(dir.join(format!("{seed}.ckpt")))?;
    write_text(&dir.join(format!("{seed}.report.txt")), &report.to_text())
}

/// Runs every (backbone, prompt width, ratio, variant, seed) combination
/// under `cfg.out` and returns the evaluated rows.
pub fn run_all(cfg: &RunConfig, config_path: Option<&Path>) -> Result<Vec<RunRow>> {
    create_dir(&cfg.out)?;
    write_text(&cfg.out.join("manifest.txt"), &manifest("run", cfg, config_path))?;
    let mut bundles: BTreeMap<u64, DatasetBundle> = BTreeMap::new();
    let mut rows = Vec::new();
    for &backbone in &cfg.backbones {
        for &dim in &cfg.prompt_dims {
            for &ratio in &cfg.ratios {
                for &seed in &cfg.seeds {
                    if let Entry::Vacant(slot) = bundles.entry(seed) {
                        slot.insert(cfg.dataset(seed)?);
                    }
                    let bundle = &bundles[&seed];
                    let concepts = bundle.qmatrix().n_concepts();
                    let probe = cfg.scenario(backbone, dim, ratio, Variant::Ours, concepts);
                    let scenario = scenario_name(&cfg.name, backbone, probe.prompt_dim, ratio);
                    let root = cfg.out.join(&scenario);
                    let mut pretrained = None;
                    for &variant in &cfg.variants {
                        let spec = cfg.scenario(backbone, dim, ratio, variant, concepts);
                        let (model, report) = if variant == Variant::Origin {
                            train_origin(bundle, &spec, seed)?
                        } else {
                            if pretrained.is_none() {
                                let (m, r) = pretrain(bundle, &spec, seed)?;
                                save_stage(&root.join("pretrain"), seed, &m, &r)?;
                                pretrained = Some(m);
                            }
                            finetune(pretrained.as_ref().expect("pretrained"), bundle, &spec, seed)?
                        };
                        save_stage(&root.join(variant.as_str()), seed, &model, &report)?;
                        let metrics = report
                            .metrics
                            .ok_or_else(|| Error::Metric(format!("{scenario}/{variant}/{seed}: empty test split")))?;
                        rows.push(RunRow {
                            scenario: scenario.clone(),
                            backbone,
                            prompt_dim: spec.prompt_dim,
                            ratio,
                            variant,
                            seed,
                            metrics,
                        });
                    }
                }
            }
        }
    }
    write_text(&cfg.out.join("metrics.csv"), &metrics_csv(&rows))?;
    write_text(&cfg.out.join("summary.csv"), &summary_csv(&rows))?;
    Ok(rows)
}

fn cmd_run(cfg: &RunConfig, config_path: Option<&Path>, stdout: &mut dyn std::io::Write) -> Result<()> {
    let rows = run_all(cfg, config_path)?;
    let mut text = format!("{} runs written to {}\n", rows.len(), cfg.out.display());
    text.push_str(&summary_csv(&rows));
    emit(stdout, &text)
}

/// The records a checkpoint is scored on: the target test split for a
/// target-stage model, every source record for a source-stage one.
fn eval_records(model: &PromptCdModel, cfg: &RunConfig) -> Result<Vec<crate::data::InteractionRecord>> {
    let seed = cfg.seeds[0];
    let bundle = cfg.dataset(seed)?;
    let layout = model.layout();
    let roster = bundle.roster();
    if layout.target != roster.target() || layout.sources != roster.sources() {
        return Err(Error::Checkpoint(format!(
            "checkpoint was trained on {:?} → {}, data has {:?} → {}",
            layout.sources,
            layout.target,
            roster.sources(),
            roster.target()
        )));
    }
    Ok(match model.stage() {
        Stage::Target => finetune_split(&bundle, cfg.ratios[0], seed)?.1,
        Stage::Source => layout
            .sources
            .iter()
            .flat_map(|d| bundle.records(d).iter().cloned())
            .collect(),
    })
}

fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, out: Option<&Path>, stdout: &mut dyn std::io::Write) -> Result<()> {
    let model = PromptCdModel::load(checkpoint)?;
    let records = eval_records(&model, cfg)?;
    let preds = model.predict(&records)?;
    let labels: Vec<f64> = records.iter().map(|r| r.label()).collect();
    let m = MetricReport::compute(&preds, &labels, DEFAULT_THRESHOLD)?;
    let text = format!(
        "auc,acc,rmse,f1,n\n{:.6},{:.6},{:.6},{:.6},{}\n",
        m.auc, m.acc, m.rmse, m.f1, m.n
    );
    if let Some(path) = out {
        write_text(path, &text)?;
    }
    emit(stdout, &text)
}

fn cmd_embed(
    checkpoint: &Path,
    kind: EntityKind,
    stage: RepStage,
    out: Option<&Path>,
    stdout: &mut dyn std::io::Write,
) -> Result<()> {
    let model = PromptCdModel::load(checkpoint)?;
    let rows = export_embeddings(&model, kind, stage)?;
    let mut text = format!("{} {kind} rows, width {}\n", rows.len(), rows.first().map_or(0, |r| r.vector.len()));
    if let Some(path) = out {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        write_embeddings(path, &rows)?;
    }
    match domain_clusters(&rows) {
        Ok(c) => {
            let _ = writeln!(
                text,
                "domains={} intra={:.6} inter={:.6} ratio={:.6}",
                c.groups.join("|"),
                c.intra,
                c.inter,
                c.ratio()
            );
        }
        Err(Error::Metric(msg)) => {
            let _ = writeln!(text, "# no cluster distances: {msg}");
        }
        Err(e) => return Err(e),
    }
    emit(stdout, &text)
}

fn cmd_recommend(
    cfg: &RunConfig,
    checkpoint: &Path,
    student: &str,
    with_outcomes: bool,
    out: Option<&Path>,
    stdout: &mut dyn std::io::Write,
) -> Result<()> {
    let model = PromptCdModel::load(checkpoint)?;
    let mut recs = recommend(&model, student, &cfg.recommend)?;
    if with_outcomes {
        let records = eval_records(&model, cfg)?;
        attach_outcomes(&mut recs, student, &records);
    }
    let mut text = RecommendationTable(&recs).to_string();
    if recs.is_empty() && cfg.recommend.k_out > 0 {
        let d = diagnose(&model, student, cfg.recommend.domain.as_deref())?;
        let open = d.mastery.iter().filter(|&&m| m < cfg.recommend.mastery_threshold).count();
        let note = if open == 0 {
            format!(
                "# {student} has mastered every concept in {} (threshold {})",
                d.domain, cfg.recommend.mastery_threshold
            )
        } else {
            format!(
                "# no exercise within {} of the mastery level for {open} unmastered concepts",
                cfg.recommend.difficulty_band
            )
        };
        let _ = writeln!(text, "{note}");
    }
    if let Some(path) = out {
        write_text(path, &text)?;
    }
    emit(stdout, &text)
}
