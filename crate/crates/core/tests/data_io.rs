use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{BufWriter, Write};

use promptcd::data::{
    bin_by_average_score, generate_synthetic, load_interactions, split_finetune, write_interactions, Aspect,
    ColumnSchema, DatasetBundle, QMatrix, SynthConfig,
};
use proptest::prelude::*;

fn slp_schema() -> ColumnSchema {
    ColumnSchema {
        student: "student_id".into(),
        exercise: "question_id".into(),
        score: "score_rate".into(),
        domain: "subject".into(),
        delimiter: b',',
    }
}

#[test]
fn loads_a_large_remapped_export() {
    const ROWS: usize = 263_485;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chinese.csv");
    {
        let mut w = BufWriter::new(std::fs::File::create(&path).unwrap());
        writeln!(w, "student_id,school_id,question_id,subject,score_rate").unwrap();
        for i in 0..ROWS {
            writeln!(w, " u{} ,sch{},q{},Chinese,{}", i % 1_853, i % 30, i % 607, (i * 7919) % 3 % 2).unwrap();
        }
    }
    let records = load_interactions(&path, &slp_schema()).unwrap();
    assert_eq!(records.len(), ROWS);
    assert_eq!(records[0].student_id, "u0");
    assert_eq!(records[ROWS - 1].exercise_id, format!("q{}", (ROWS - 1) % 607));
    assert!(records.iter().all(|r| r.domain_id == "Chinese"));
}

#[test]
fn synthetic_files_round_trip() {
    let synth = SynthConfig {
        overlap_entities: 30,
        other_entities_per_domain: 12,
        records_per_entity: 6,
        ..SynthConfig::default()
    };
    let bundle = generate_synthetic(&synth, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let inter = dir.path().join("interactions.csv");
    let q = dir.path().join("qmatrix.csv");
    let all = bundle.all_records();
    write_interactions(&inter, &all).unwrap();
    bundle.qmatrix().write(&q).unwrap();

    let back = load_interactions(&inter, &ColumnSchema::default()).unwrap();
    assert_eq!(back, all);
    assert_eq!(back.len(), synth.expected_records());
    let qback = QMatrix::load(&q).unwrap();
    assert_eq!(&qback, bundle.qmatrix());

    let rebuilt = DatasetBundle::assemble(back, qback, synth.source_ids(), synth.target_id(), Aspect::Exercise, true).unwrap();
    assert_eq!(rebuilt.partition(), bundle.partition());
    assert_eq!(rebuilt.target_records(), bundle.target_records());
}

#[test]
fn qmatrix_list_and_column_layouts_agree() {
    let columns = "exercise_id,c0,c1,c2\ne1,1,0,1\ne2,0,1,0\n";
    let list = "exercise_id,concepts\ne1,c0;c2\ne2,c1\n";
    let a = QMatrix::read(columns.as_bytes()).unwrap();
    let b = QMatrix::read(list.as_bytes()).unwrap();
    assert_eq!(a.row("e1"), b.row("e1"));
    assert_eq!(a.row("e2"), b.row("e2"));
}

#[test]
fn strict_mode_rejects_unknown_domains_with_a_count() {
    let mut text = String::from("student_id,exercise_id,score,domain_id\n");
    for (i, d) in ["a", "b", "t", "zz", "zz"].iter().enumerate() {
        writeln!(text, "s{i},e1,1,{d}").unwrap();
    }
    let records = promptcd::data::read_interactions(text.as_bytes(), &ColumnSchema::default()).unwrap();
    let q = QMatrix::read("exercise_id,concepts\ne1,c0\n".as_bytes()).unwrap();
    let sources = vec!["a".to_string(), "b".to_string()];
    let err = DatasetBundle::assemble(records.clone(), q.clone(), sources.clone(), "t".into(), Aspect::Exercise, true)
        .unwrap_err();
    assert!(err.to_string().contains("2 records"), "{err}");
    let lenient = DatasetBundle::assemble(records, q, sources, "t".into(), Aspect::Exercise, false).unwrap();
    assert_eq!(lenient.len(), 3);
}

#[test]
fn thirty_schools_in_four_bins() {
    let schools: Vec<(String, Vec<u8>)> = (0..30)
        .map(|i| (format!("s{i:02}"), (0..30).map(|j| u8::from(j < i)).collect()))
        .collect();
    let bins = bin_by_average_score(schools.iter().map(|(s, v)| (s, v)), 4).unwrap();

    // oracle: rank by mean descending, then hand out 30 items in four
    // contiguous chunks whose sizes differ by at most one, larger ones first
    let mut ranked: Vec<(f64, &str)> = schools
        .iter()
        .map(|(s, v)| (v.iter().map(|&x| f64::from(x)).sum::<f64>() / v.len() as f64, s.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
    let sizes = [8, 8, 7, 7];
    let mut expected = Vec::new();
    for (bin, &size) in sizes.iter().enumerate() {
        expected.extend(std::iter::repeat_n(bin, size));
    }
    for ((_, school), bin) in ranked.iter().zip(expected) {
        assert_eq!(bins[*school], bin, "{school}");
    }
    let mut counts = [0usize; 4];
    for b in bins.values() {
        counts[*b] += 1;
    }
    assert_eq!(counts, [8, 8, 7, 7]);
}

#[test]
fn no_shift_gives_matching_positive_rates() {
    let synth = SynthConfig {
        shift: 0.0,
        overlap_entities: 200,
        other_entities_per_domain: 50,
        share_other_entities: true,
        ..SynthConfig::default()
    };
    let bundle = generate_synthetic(&synth, 11).unwrap();
    let rates: Vec<f64> = bundle
        .roster()
        .domains()
        .map(|d| {
            let r = bundle.records(d);
            r.iter().map(|x| x.label()).sum::<f64>() / r.len() as f64
        })
        .collect();
    for w in rates.windows(2) {
        assert!((w[0] - w[1]).abs() <= 0.05, "{rates:?}");
    }
}

proptest! {
    #[test]
    fn split_is_a_partition(n in 0usize..300, ratio in 0.0f64..=1.0, seed in any::<u64>()) {
        let items: Vec<usize> = (0..n).collect();
        let (a, b) = split_finetune(&items, ratio, seed).unwrap();
        prop_assert_eq!(a.len(), (ratio * n as f64).round() as usize);
        let sa: BTreeSet<_> = a.iter().copied().collect();
        let sb: BTreeSet<_> = b.iter().copied().collect();
        prop_assert!(sa.is_disjoint(&sb));
        prop_assert_eq!(sa.len() + sb.len(), n);
        prop_assert_eq!(split_finetune(&items, ratio, seed).unwrap(), (a, b));
    }

    #[test]
    fn binning_ignores_input_order(
        scores in prop::collection::vec(prop::collection::vec(0u8..=1, 1..6), 1..25),
        bins in 1usize..5,
        rotate in 0usize..25,
    ) {
        prop_assume!(bins <= scores.len());
        let named: Vec<(String, Vec<u8>)> =
            scores.into_iter().enumerate().map(|(i, v)| (format!("s{i:02}"), v)).collect();
        let mut shuffled = named.clone();
        let k = rotate % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        let a = bin_by_average_score(named.iter().map(|(s, v)| (s, v)), bins).unwrap();
        let b = bin_by_average_score(shuffled.iter().map(|(s, v)| (s, v)), bins).unwrap();
        prop_assert_eq!(a, b);
    }
}
