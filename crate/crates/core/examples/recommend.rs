//! Fine-tunes NCDM with prompt transfer and recommends target exercises for
//! one student, alongside the student's observed scores on them.
//!
//! ```text
//! cargo run --release --example recommend -- s0003
//! ```

use promptcd::backbones::BackboneKind;
use promptcd::data::{generate_synthetic, SynthConfig};
use promptcd::prompt::Variant;
use promptcd::recommend::{attach_outcomes, diagnose, recommend, RecommendConfig, RecommendationTable};
use promptcd::training::{finetune, pretrain, ScenarioSpec};

fn main() -> promptcd::Result<()> {
    let bundle = generate_synthetic(&SynthConfig::default(), 0)?;
    let student = std::env::args()
        .nth(1)
        .unwrap_or_else(|| bundle.target_records()[0].student_id.clone());
    let spec = ScenarioSpec::benchmark(BackboneKind::Ncdm, Variant::Ours);
    let (pre, _) = pretrain(&bundle, &spec, 0)?;
    let (model, _) = finetune(&pre, &bundle, &spec, 0)?;

    let diagnosis = diagnose(&model, &student, None)?;
    for (concept, m) in diagnosis.concepts.iter().zip(&diagnosis.mastery) {
        println!("{concept}: mastery {m:.3}");
    }
    let mut recs = recommend(&model, &student, &RecommendConfig::default())?;
    attach_outcomes(&mut recs, &student, bundle.target_records());
    print!("{}", RecommendationTable(&recs));
    Ok(())
}
