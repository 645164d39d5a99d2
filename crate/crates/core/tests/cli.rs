use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use promptcd::data::{load_interactions, ColumnSchema};

fn promptcd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_promptcd")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

const SMALL: [&str; 6] = [
    "--set",
    "synth.overlap=30",
    "--set",
    "synth.other=10",
    "--set",
    "synth.records_per_entity=10",
];

const QUICK: [&str; 4] = ["--set", "train.pretrain_epochs=2", "--set", "train.finetune_epochs=1"];

fn synth(dir: &Path) -> PathBuf {
    let out = dir.join("data");
    let mut args = vec!["synth", "--seed", "2", "--out", out.to_str().unwrap()];
    args.extend(SMALL);
    stdout(&promptcd(&args));
    out.join("dataset.conf")
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

#[test]
fn synth_writes_loadable_files() {
    let dir = tempfile::tempdir().unwrap();
    let conf = synth(dir.path());
    let data = conf.parent().unwrap();
    let manifest = read(data.join("manifest.txt"));
    assert!(manifest.starts_with("command = synth\n"), "{manifest}");
    assert!(manifest.contains("resolved_seeds = 2"));
    let records = load_interactions(data.join("interactions.csv"), &ColumnSchema::default()).unwrap();
    // 30 students answering 10 exercises in each of three domains
    assert_eq!(records.len(), 30 * 10 * 3);
    assert!(read(&conf).contains("data.target = target"));
}

#[test]
fn run_writes_rows_for_every_variant_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let conf = synth(dir.path());
    let out = dir.path().join("run");
    let mut args = vec![
        "run",
        "--config",
        conf.to_str().unwrap(),
        "--backbone",
        "mirt",
        "--variant",
        "origin,ours,ours_plus",
        "--seed",
        "0..3",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend(QUICK);
    let text = stdout(&promptcd(&args));
    assert!(text.starts_with("9 runs written"), "{text}");
    let metrics = read(out.join("metrics.csv"));
    assert_eq!(metrics.lines().count(), 1 + 9);
    let summary = read(out.join("summary.csv"));
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.split(',').nth(5) == Some("3")), "{summary}");
    for variant in ["origin", "ours", "ours_plus"] {
        for seed in 0..3 {
            assert!(out.join(format!("benchmark-mirt-p10-r0.2/{variant}/{seed}.ckpt")).exists());
        }
    }
    assert!(out.join("benchmark-mirt-p10-r0.2/pretrain/0.ckpt").exists());
    assert!(read(out.join("manifest.txt")).contains("command = run"));
}

fn summary_scenarios(dir: &Path, extra: &[&str]) -> Vec<String> {
    let conf = synth(dir);
    let out = dir.join("sweep");
    let mut args = vec![
        "run",
        "--config",
        conf.to_str().unwrap(),
        "--backbone",
        "irt",
        "--variant",
        "ours",
        "--seed",
        "0",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend(QUICK);
    args.extend(extra);
    stdout(&promptcd(&args));
    read(out.join("summary.csv"))
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect()
}

#[test]
fn ratio_sweep_gives_one_summary_per_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let names = summary_scenarios(dir.path(), &["--ratio", "0.1,0.2,0.3"]);
    assert_eq!(names, ["benchmark-irt-p5-r0.1", "benchmark-irt-p5-r0.2", "benchmark-irt-p5-r0.3"]);
}

#[test]
fn prompt_dim_sweep_gives_one_summary_per_dim() {
    let dir = tempfile::tempdir().unwrap();
    let mut names = summary_scenarios(dir.path(), &["--prompt-dim", "1,5,10,20"]);
    names.sort();
    assert_eq!(
        names,
        ["benchmark-irt-p1-r0.2", "benchmark-irt-p10-r0.2", "benchmark-irt-p20-r0.2", "benchmark-irt-p5-r0.2"]
    );
}

fn trained(dir: &Path) -> (PathBuf, PathBuf) {
    let conf = synth(dir);
    let out = dir.join("run");
    let mut args = vec![
        "run",
        "--config",
        conf.to_str().unwrap(),
        "--backbone",
        "ncdm",
        "--variant",
        "ours",
        "--seed",
        "0",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend(QUICK);
    stdout(&promptcd(&args));
    (conf, out.join("benchmark-ncdm-p20-r0.2/ours/0.ckpt"))
}

#[test]
fn eval_embed_and_recommend_read_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let (conf, ckpt) = trained(dir.path());
    let (conf, ckpt) = (conf.to_str().unwrap(), ckpt.to_str().unwrap());

    let eval = stdout(&promptcd(&["eval", "--config", conf, "--seed", "0", "--checkpoint", ckpt]));
    assert_eq!(eval.lines().next(), Some("auc,acc,rmse,f1,n"));
    assert_eq!(eval.lines().nth(1).unwrap().split(',').count(), 5);

    let embed_path = dir.path().join("emb/students.csv");
    let embed = stdout(&promptcd(&[
        "embed",
        "--checkpoint",
        ckpt,
        "--kind",
        "student",
        "--out",
        embed_path.to_str().unwrap(),
    ]));
    assert!(embed.starts_with("30 student rows"), "{embed}");
    assert!(embed_path.exists());

    let header = "concept,exercise,mastery,difficulty,true_performance";
    let table = stdout(&promptcd(&[
        "recommend", "--checkpoint", ckpt, "--config", conf, "--student", "s0001", "--with-outcomes",
    ]));
    assert_eq!(table.lines().next(), Some(header));
    for row in table.lines().skip(1).filter(|l| !l.starts_with('#')) {
        let mastery: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
        assert!(mastery < 0.5, "{row}");
    }

    let empty = stdout(&promptcd(&["recommend", "--checkpoint", ckpt, "--student", "s0001", "-k", "0"]));
    assert_eq!(empty, format!("{header}\n"));

    let mastered = stdout(&promptcd(&[
        "recommend",
        "--checkpoint",
        ckpt,
        "--student",
        "s0001",
        "--set",
        "recommend.threshold=0",
    ]));
    let mut lines = mastered.lines();
    assert_eq!(lines.next(), Some(header));
    assert!(lines.next().unwrap().contains("has mastered every concept"), "{mastered}");
}

#[test]
fn errors_map_to_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (conf, ckpt) = trained(dir.path());
    let (conf, ckpt) = (conf.to_str().unwrap(), ckpt.to_str().unwrap());

    let unknown_key = promptcd(&["synth", "--set", "synth.nonsense=1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(unknown_key.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unknown_key.stderr).contains("synth.nonsense"));

    let unknown_student = promptcd(&["recommend", "--checkpoint", ckpt, "--student", "nobody"]);
    assert_eq!(unknown_student.status.code(), Some(3));

    let missing = dir.path().join("none.ckpt");
    let no_ckpt = promptcd(&["eval", "--config", conf, "--checkpoint", missing.to_str().unwrap()]);
    assert_eq!(no_ckpt.status.code(), Some(4));

    let garbage = dir.path().join("garbage.ckpt");
    std::fs::write(&garbage, "{}").unwrap();
    let bad = promptcd(&["embed", "--checkpoint", garbage.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(4));

    let usage = promptcd(&["frobnicate"]);
    assert!(!usage.status.success());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("exp.conf");
    std::fs::write(&conf, "name = exp\nseeds = 4\nsynth.overlap = 25\nsynth.other = 8\nsynth.records_per_entity = 8\n").unwrap();
    let out = dir.path().join("d");
    stdout(&promptcd(&[
        "synth",
        "--config",
        conf.to_str().unwrap(),
        "--seed",
        "6",
        "--out",
        out.to_str().unwrap(),
    ]));
    let manifest = read(out.join("manifest.txt"));
    assert!(manifest.contains("resolved_seeds = 6"), "{manifest}");
    assert!(manifest.contains("name = exp"), "{manifest}");
}
