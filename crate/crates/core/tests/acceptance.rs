//! Acceptance run: one PASS/FAIL line per criterion. Set
//! `PROMPTCD_STRICT_ACCEPTANCE=1` to exit non-zero when any criterion fails.
//! Built with `harness = false` so the lines always show.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path as FsPath;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{brute_force_partition, fd_relative_error, pairwise_auc, partition_laws_hold, random_instance, PATHS};
use promptcd::backbones::{ncdm_forward, BackboneKind};
use promptcd::data::{
    compute_partition, generate_synthetic, Aspect, DatasetBundle, DomainRoster, EntityKind, SynthConfig,
};
use promptcd::eval::{acc_rmse_f1, auc, domain_clusters, export_embeddings};
use promptcd::grad::sigmoid;
use promptcd::model::{Checkpoint, PromptCdModel, RepStage};
use promptcd::prompt::Variant;
use promptcd::recommend::{candidates, diagnose, recommend, RecommendConfig};
use promptcd::training::{finetune, prepare_target, pretrain, pretrain_without_prompts, train_origin, ScenarioSpec};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed < limit
}

// ---------------------------------------------------------------- AC1

fn ac1() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    for kind in BackboneKind::ALL {
        for path in PATHS {
            for (aspect, seeds) in [(Aspect::Exercise, 100..104u64), (Aspect::Student, 200..204u64)] {
                for seed in seeds {
                    let (mut model, batch, labels) = random_instance(kind, path, aspect, seed);
                    let err = fd_relative_error(&mut model, &batch, &labels, 1e-4, 6, seed);
                    worst = worst.max(err);
                    instances += 1;
                }
            }
        }
    }
    let t = start.elapsed();
    outcome(
        instances >= 100 && worst < 1e-4 && within(t, Duration::from_secs(60)),
        format!("{instances} instances, worst relative error {worst:.2e}, {:.1}s", t.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- AC2

fn ac2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC2);
    let mut auc_mismatch = 0;
    let mut worst_other: f64 = 0.0;
    let mut cases = 0;
    while cases < 1000 {
        let n = rng.random_range(2..=200);
        // coarse grid so ties are common
        let levels = rng.random_range(1..=12);
        let preds: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let labels: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
        let pos = labels.iter().filter(|&&y| y == 1.0).count();
        if pos == 0 || pos == n {
            continue;
        }
        cases += 1;
        if auc(&preds, &labels).unwrap() != pairwise_auc(&preds, &labels) {
            auc_mismatch += 1;
        }
        let probs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let thr = 0.5;
        let (acc, rmse, f1) = acc_rmse_f1(&probs, &labels, thr).unwrap();
        let (mut tp, mut fp, mut fneg, mut right, mut se) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let yhat = if probs[i] >= thr { 1.0 } else { 0.0 };
            if yhat == labels[i] {
                right += 1.0;
            }
            if yhat == 1.0 && labels[i] == 1.0 {
                tp += 1.0;
            }
            if yhat == 1.0 && labels[i] == 0.0 {
                fp += 1.0;
            }
            if yhat == 0.0 && labels[i] == 1.0 {
                fneg += 1.0;
            }
            se += (probs[i] - labels[i]).powi(2);
        }
        let f1_oracle = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fneg) };
        let diffs = [
            (acc - right / n as f64).abs(),
            (rmse - (se / n as f64).sqrt()).abs(),
            (f1 - f1_oracle).abs(),
        ];
        worst_other = diffs.iter().fold(worst_other, |a, &b| a.max(b));
    }
    let t = start.elapsed();
    outcome(
        auc_mismatch == 0 && worst_other <= 1e-12 && within(t, Duration::from_secs(60)),
        format!(
            "{cases} cases, {auc_mismatch} AUC mismatches, worst ACC/RMSE/F1 gap {worst_other:.1e}, {:.2}s",
            t.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- AC3

fn random_roster(rng: &mut ChaCha8Rng) -> DomainRoster {
    let n_sources = rng.random_range(1..=4);
    let sources: Vec<String> = (0..n_sources).map(|i| format!("src{i}")).collect();
    let target = "tgt".to_string();
    let mut universes = || -> BTreeMap<String, BTreeSet<String>> {
        let size = rng.random_range(1..=50);
        let pool: Vec<String> = (0..size).map(|i| format!("e{i:02}")).collect();
        sources
            .iter()
            .chain([&target])
            .map(|d| {
                let mut u: BTreeSet<String> = pool.iter().filter(|_| rng.random::<f64>() < 0.5).cloned().collect();
                u.insert(pool.choose(rng).unwrap().clone());
                (d.clone(), u)
            })
            .collect()
    };
    let students = universes();
    let exercises = universes();
    DomainRoster::new(sources.clone(), target.clone(), students, exercises).unwrap()
}

fn ac3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC3);
    let mut bad = 0;
    for _ in 0..500 {
        let roster = random_roster(&mut rng);
        for kind in [EntityKind::Student, EntityKind::Exercise] {
            let p = compute_partition(&roster, kind).unwrap();
            let (o, rest) = brute_force_partition(&roster, kind);
            if p.overlap != o || p.non_overlap != rest || !partition_laws_hold(&p, &roster.all_entities(kind)) {
                bad += 1;
            }
        }
    }
    let t = start.elapsed();
    outcome(
        bad == 0 && within(t, Duration::from_secs(10)),
        format!("500 rosters, {bad} mismatches, {:.2}s", t.as_secs_f64()),
    )
}

// ------------------------------------------------------- shared benchmark

#[derive(Default)]
struct BackboneRuns {
    origin: Vec<f64>,
    ours: Vec<f64>,
    ours_plus: Vec<f64>,
    ratio_low: Vec<f64>,
    ratio_high: Vec<f64>,
    cluster_prompt: Vec<f64>,
    cluster_plain: Vec<f64>,
    /// origin + pretrain + ours + ours_plus
    transfer_time: Duration,
    /// pretrain + two ratio fine-tunes
    ratio_time: Duration,
    seed0_ours: Option<PromptCdModel>,
}

struct Benchmark {
    runs: BTreeMap<BackboneKind, BackboneRuns>,
    seed0_bundle: DatasetBundle,
    seed0_pretrained_irt: PromptCdModel,
}

fn test_auc(report: &promptcd::training::TrainReport) -> f64 {
    report.metrics.expect("test metrics").auc
}

fn run_benchmark() -> Benchmark {
    let synth = SynthConfig::default();
    let bundles: Vec<DatasetBundle> = SEEDS.iter().map(|&s| generate_synthetic(&synth, s).unwrap()).collect();
    let mut runs = BTreeMap::new();
    let mut seed0_pretrained_irt = None;
    for kind in BackboneKind::ALL {
        let mut r = BackboneRuns::default();
        let spec = ScenarioSpec::benchmark(kind, Variant::Ours);
        for (&seed, bundle) in SEEDS.iter().zip(&bundles) {
            let t = Instant::now();
            let (_, origin) = train_origin(bundle, &spec.with_variant(Variant::Origin), seed).unwrap();
            let t_origin = t.elapsed();

            let t = Instant::now();
            let (pre, _) = pretrain(bundle, &spec, seed).unwrap();
            let t_pre = t.elapsed();

            let t = Instant::now();
            let (ours_model, ours) = finetune(&pre, bundle, &spec, seed).unwrap();
            let (_, plus) = finetune(&pre, bundle, &spec.with_variant(Variant::OursPlus), seed).unwrap();
            r.transfer_time += t_origin + t_pre + t.elapsed();

            let t = Instant::now();
            let low = ScenarioSpec { ratio: 0.1, ..spec.clone() };
            let high = ScenarioSpec { ratio: 0.3, ..spec.clone() };
            let (_, lo) = finetune(&pre, bundle, &low, seed).unwrap();
            let (_, hi) = finetune(&pre, bundle, &high, seed).unwrap();
            r.ratio_time += t_pre + t.elapsed();

            let (plain, _) = pretrain_without_prompts(bundle, &spec, seed).unwrap();
            let ratio_of = |m: &PromptCdModel| {
                domain_clusters(&export_embeddings(m, EntityKind::Exercise, RepStage::Out).unwrap())
                    .unwrap()
                    .ratio()
            };
            r.cluster_prompt.push(ratio_of(&pre));
            r.cluster_plain.push(ratio_of(&plain));

            r.origin.push(test_auc(&origin));
            r.ours.push(test_auc(&ours));
            r.ours_plus.push(test_auc(&plus));
            r.ratio_low.push(test_auc(&lo));
            r.ratio_high.push(test_auc(&hi));
            if seed == 0 {
                r.seed0_ours = Some(ours_model);
                if kind == BackboneKind::Irt {
                    seed0_pretrained_irt = Some(pre);
                }
            }
        }
        runs.insert(kind, r);
    }
    Benchmark {
        runs,
        seed0_bundle: bundles.into_iter().next().unwrap(),
        seed0_pretrained_irt: seed0_pretrained_irt.unwrap(),
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

// ---------------------------------------------------------------- AC4

fn ac4(b: &Benchmark) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut total = Duration::ZERO;
    for (kind, r) in &b.runs {
        let (o, a, p) = (mean(&r.origin), mean(&r.ours), mean(&r.ours_plus));
        let ok = a >= o + 0.03 && p >= a - 0.005;
        pass &= ok;
        total += r.transfer_time;
        parts.push(format!(
            "{kind}: origin {o:.4} ours {a:.4} ours+ {p:.4}{}",
            if ok { "" } else { " (miss)" }
        ));
    }
    pass &= within(total, Duration::from_secs(600));
    outcome(pass, format!("{}; {:.0}s", parts.join("; "), total.as_secs_f64()))
}

// ---------------------------------------------------------------- AC5

fn ac5(b: &Benchmark) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut total = Duration::ZERO;
    for (kind, r) in &b.runs {
        let (lo, hi) = (mean(&r.ratio_low), mean(&r.ratio_high));
        pass &= hi >= lo;
        total += r.ratio_time;
        parts.push(format!("{kind}: 0.1 → {lo:.4}, 0.3 → {hi:.4}"));
    }
    pass &= within(total, Duration::from_secs(600));
    outcome(pass, format!("{}; {:.0}s", parts.join("; "), total.as_secs_f64()))
}

// ---------------------------------------------------------------- AC6

fn ac6(b: &Benchmark) -> Outcome {
    let start = Instant::now();
    let model = b.runs[&BackboneKind::Ncdm].seed0_ours.as_ref().unwrap();
    let layers = model.ncdm_layers().unwrap();
    let min_weight = layers
        .iter()
        .flat_map(|l| l.weight.iter().copied())
        .fold(f64::INFINITY, f64::min);
    let qrows: Vec<Vec<f64>> = model
        .layout()
        .exercises
        .iter()
        .map(|s| model.qrow(&s.id).unwrap().to_vec())
        .collect();
    let k = qrows[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC6);
    let mut drops = 0;
    for _ in 0..1000 {
        let q = qrows.choose(&mut rng).unwrap();
        let active: Vec<usize> = (0..k).filter(|&c| q[c] != 0.0).collect();
        let c = *active.choose(&mut rng).unwrap();
        let mastery: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        let diff: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        let disc = rng.random::<f64>();
        let mut raised = mastery.clone();
        raised[c] += rng.random_range(0.01..0.5);
        let before = ncdm_forward(&mastery, &diff, disc, q, &layers).unwrap();
        let after = ncdm_forward(&raised, &diff, disc, q, &layers).unwrap();
        if after < before {
            drops += 1;
        }
    }
    let t = start.elapsed();
    outcome(
        drops == 0 && min_weight >= 0.0 && within(t, Duration::from_secs(60)),
        format!(
            "1000 probes on a trained model, {drops} decreases, min weight {min_weight:.3e}, {:.2}s",
            t.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- AC7

fn ac7(b: &Benchmark) -> Outcome {
    let spec = ScenarioSpec::benchmark(BackboneKind::Irt, Variant::Ours);
    let mut checked = 0;
    let mut differing = 0;
    for variant in [Variant::Ours, Variant::OursPlus] {
        let target = prepare_target(&b.seed0_pretrained_irt, &b.seed0_bundle, &spec.with_variant(variant), 0).unwrap();
        // compare through serialized checkpoints
        let src = Checkpoint::from_json(&b.seed0_pretrained_irt.to_checkpoint().to_json().unwrap()).unwrap();
        let tgt = Checkpoint::from_json(&target.to_checkpoint().to_json().unwrap()).unwrap();
        let a = src.params.by_tag("p_o").unwrap();
        let t = tgt.params.by_tag("p_o").unwrap();
        if a.row_keys != t.row_keys || a.shape != t.shape {
            differing += a.len();
            continue;
        }
        for (x, y) in a.values.iter().zip(&t.values) {
            checked += 1;
            if x.to_bits() != y.to_bits() {
                differing += 1;
            }
        }
    }
    outcome(
        checked > 0 && differing == 0,
        format!("{checked} prompt values compared over ours and ours_plus, {differing} differ"),
    )
}

// ---------------------------------------------------------------- AC8

fn ac8(b: &Benchmark) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (kind, r) in &b.runs {
        let (p, o) = (mean(&r.cluster_prompt), mean(&r.cluster_plain));
        pass &= p > o;
        parts.push(format!("{kind}: with prompts {p:.3} vs without {o:.3}"));
    }
    outcome(pass, format!("exercise inter/intra ratio, {}", parts.join("; ")))
}

// ---------------------------------------------------------------- AC9

fn ac9(b: &Benchmark) -> Outcome {
    let mut rows = 0;
    let mut violations = Vec::new();
    let cfg = RecommendConfig::default();
    for (kind, r) in &b.runs {
        let model = r.seed0_ours.as_ref().unwrap();
        let target = model.layout().target.clone();
        let students: Vec<String> = model
            .layout()
            .students
            .iter()
            .filter(|s| s.domain == target)
            .map(|s| s.id.clone())
            .collect();
        for student in students.iter().take(40) {
            let recs = recommend(model, student, &cfg).unwrap();
            if recs.is_empty() {
                continue;
            }
            let d = diagnose(model, student, None).unwrap();
            // brute-force pool: every candidate scored by its best gap, ties by id
            let mut all = candidates(model, &d, cfg.mastery_threshold).unwrap();
            let score = |c: &promptcd::recommend::Candidate| {
                c.difficulty
                    .iter()
                    .map(|(&k, &x)| (x - d.mastery[k]).abs())
                    .fold(f64::INFINITY, f64::min)
            };
            all.sort_by(|a, b| score(a).total_cmp(&score(b)).then(a.exercise.cmp(&b.exercise)));
            let pool = &all[..cfg.pool().min(all.len())];
            let mut seen = BTreeSet::new();
            for rec in &recs {
                rows += 1;
                let c = d.concepts.iter().position(|x| *x == rec.concept).unwrap();
                if !(rec.mastery < 0.5) || rec.mastery != d.mastery[c] {
                    violations.push(format!("{kind} {student} {}: mastery {}", rec.concept, rec.mastery));
                }
                if !seen.insert(rec.exercise.clone()) {
                    violations.push(format!("{kind} {student}: {} listed twice", rec.exercise));
                }
                let gap = (rec.difficulty - rec.mastery).abs();
                let in_pool = pool
                    .iter()
                    .any(|p| p.exercise == rec.exercise && p.difficulty.get(&c) == Some(&rec.difficulty));
                let better = pool
                    .iter()
                    .filter_map(|p| p.difficulty.get(&c))
                    .any(|&x| (x - rec.mastery).abs() < gap);
                if !in_pool || better {
                    violations.push(format!("{kind} {student} {}: {} is not the closest", rec.concept, rec.exercise));
                }
                if *kind == BackboneKind::Ncdm {
                    let alpha = model
                        .representation(EntityKind::Student, &d.domain, student, RepStage::Out)
                        .unwrap();
                    if (sigmoid(alpha[c]) - rec.mastery).abs() > 1e-12 {
                        violations.push(format!("{kind} {student}: mastery does not match σ(α)"));
                    }
                }
            }
        }
    }
    outcome(
        rows > 0 && violations.is_empty(),
        format!(
            "{rows} recommendation rows re-checked, {} violations{}",
            violations.len(),
            violations.first().map(|v| format!(" (first: {v})")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------- AC10

fn snapshot(dir: &FsPath) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn promptcd(args: &[&str]) -> (bool, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_promptcd")).args(args).output().unwrap();
    (out.status.success(), out.stdout)
}

fn ac10() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    let data_s = data.to_str().unwrap();
    let run_s = run.to_str().unwrap();
    let conf = data.join("dataset.conf");
    let conf_s = conf.to_str().unwrap();
    let commands: Vec<Vec<&str>> = vec![
        vec!["synth", "--seed", "5", "--set", "synth.overlap=40", "--set", "synth.other=12", "--set", "synth.records_per_entity=12", "--out", data_s],
        vec!["run", "--config", conf_s, "--backbone", "irt,kscd", "--seed", "0,1", "--set", "train.pretrain_epochs=3", "--set", "train.finetune_epochs=2", "--out", run_s],
    ];
    let mut differing = Vec::new();
    let mut failures = 0;
    for cmd in &commands {
        let (ok, _) = promptcd(cmd);
        let first = snapshot(tmp.path());
        let (ok2, _) = promptcd(cmd);
        let second = snapshot(tmp.path());
        if !ok || !ok2 {
            failures += 1;
        }
        for (name, bytes) in &first {
            if second.get(name) != Some(bytes) {
                differing.push(name.clone());
            }
        }
    }
    let ckpt = run.join("benchmark-kscd-p20-r0.2/ours_plus/1.ckpt");
    let ckpt_s = ckpt.to_str().unwrap();
    let queries: Vec<Vec<&str>> = vec![
        vec!["eval", "--config", conf_s, "--seed", "1", "--checkpoint", ckpt_s],
        vec!["embed", "--checkpoint", ckpt_s, "--kind", "student"],
        vec!["recommend", "--checkpoint", ckpt_s, "--student", "s0003", "--config", conf_s, "--seed", "1", "--with-outcomes"],
    ];
    for q in &queries {
        let (ok, a) = promptcd(q);
        let (ok2, b) = promptcd(q);
        if !ok || !ok2 {
            failures += 1;
        }
        if a != b {
            differing.push(q[0].to_string());
        }
    }
    let files = snapshot(tmp.path()).len();
    outcome(
        failures == 0 && differing.is_empty() && files > 10,
        format!(
            "{} commands re-run, {files} files compared, {failures} failed, {} differ{}",
            commands.len() + queries.len(),
            differing.len(),
            differing.first().map(|d| format!(" (first: {d})")).unwrap_or_default()
        ),
    )
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    })
}

fn main() {
    // `cargo test -- --list` and filters: nothing to enumerate
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut results: Vec<(&str, &str, Outcome)> = vec![
        ("AC1", "gradient correctness", guarded(ac1)),
        ("AC2", "metric oracles", guarded(ac2)),
        ("AC3", "partition set algebra", guarded(ac3)),
    ];
    let started = Instant::now();
    let bench = catch_unwind(run_benchmark);
    eprintln!("benchmark trained in {:.0}s", started.elapsed().as_secs_f64());
    match &bench {
        Ok(b) => {
            results.push(("AC4", "transfer benefit", guarded(|| ac4(b))));
            results.push(("AC5", "fine-tune ratio trend", guarded(|| ac5(b))));
            results.push(("AC6", "NCDM monotonicity", guarded(|| ac6(b))));
            results.push(("AC7", "personalized prompt identity", guarded(|| ac7(b))));
            results.push(("AC8", "cluster separation", guarded(|| ac8(b))));
            results.push(("AC9", "recommendation contract", guarded(|| ac9(b))));
        }
        Err(_) => {
            for (id, name) in [
                ("AC4", "transfer benefit"),
                ("AC5", "fine-tune ratio trend"),
                ("AC6", "NCDM monotonicity"),
                ("AC7", "personalized prompt identity"),
                ("AC8", "cluster separation"),
                ("AC9", "recommendation contract"),
            ] {
                results.push((id, name, outcome(false, "benchmark training panicked")));
            }
        }
    }
    results.push(("AC10", "determinism", guarded(ac10)));

    let mut failed = 0;
    for (id, name, o) in &results {
        println!("{id} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 && std::env::var_os("PROMPTCD_STRICT_ACCEPTANCE").is_some() {
        std::process::exit(1);
    }
}
