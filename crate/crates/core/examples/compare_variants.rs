//! Origin vs. Ours vs. Ours+ on the synthetic benchmark.
//!
//! ```text
//! cargo run --release --example compare_variants -- ncdm 3
//! ```

use std::env;
use std::time::Instant;

use promptcd::backbones::BackboneKind;
use promptcd::data::{generate_synthetic, SynthConfig};
use promptcd::prompt::Variant;
use promptcd::training::{finetune, pretrain, train_origin, ScenarioSpec};

fn main() -> promptcd::Result<()> {
    let args: Vec<String> = env::args().skip(1).collect();
    let kinds: Vec<BackboneKind> = match args.first() {
        Some(k) if k != "all" => vec![k.parse()?],
        _ => BackboneKind::ALL.to_vec(),
    };
    let n_seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);

    for kind in kinds {
        let spec = ScenarioSpec::benchmark(kind, Variant::Ours);
        let mut sums = [0.0; 3];
        let t = Instant::now();
        for seed in 0..n_seeds {
            let bundle = generate_synthetic(&SynthConfig::default(), seed)?;
            let (_, origin) = train_origin(&bundle, &spec.with_variant(Variant::Origin), seed)?;
            let (pre, pre_report) = pretrain(&bundle, &spec, seed)?;
            let (_, ours) = finetune(&pre, &bundle, &spec, seed)?;
            let (_, plus) = finetune(&pre, &bundle, &spec.with_variant(Variant::OursPlus), seed)?;
            let aucs = [&origin, &ours, &plus].map(|r| r.metrics.expect("test split").auc);
            println!(
                "{kind} seed {seed}: origin {:.4}  ours {:.4}  ours+ {:.4}  (pretrain {} epochs, loss {:.4})",
                aucs[0],
                aucs[1],
                aucs[2],
                pre_report.epochs.len(),
                pre_report.final_loss().unwrap_or(f64::NAN)
            );
            for (s, a) in sums.iter_mut().zip(aucs) {
                *s += a;
            }
        }
        let n = n_seeds as f64;
        println!(
            "{kind} mean: origin {:.4}  ours {:.4}  ours+ {:.4}  [{:.1}s]",
            sums[0] / n,
            sums[1] / n,
            sums[2] / n,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
