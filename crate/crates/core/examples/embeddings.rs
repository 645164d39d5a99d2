//! Pretrains on the source domains and measures how well the fused exercise
//! representations separate by domain.
//!
//! ```text
//! cargo run --release --example embeddings -- mirt
//! ```

use promptcd::backbones::BackboneKind;
use promptcd::data::{generate_synthetic, EntityKind, SynthConfig};
use promptcd::eval::{domain_clusters, export_embeddings};
use promptcd::model::RepStage;
use promptcd::prompt::Variant;
use promptcd::training::{pretrain, pretrain_without_prompts, ScenarioSpec};

fn main() -> promptcd::Result<()> {
    let kind: BackboneKind = std::env::args().nth(1).as_deref().unwrap_or("irt").parse()?;
    let bundle = generate_synthetic(&SynthConfig::default(), 0)?;
    let spec = ScenarioSpec::benchmark(kind, Variant::Ours);

    let (with, _) = pretrain(&bundle, &spec, 0)?;
    let (without, _) = pretrain_without_prompts(&bundle, &spec, 0)?;
    for (label, model) in [("with prompts", &with), ("without prompts", &without)] {
        let rows = export_embeddings(model, EntityKind::Exercise, RepStage::Out)?;
        let report = domain_clusters(&rows)?;
        println!(
            "{kind} {label}: inter {:.4}  intra {:.4}  ratio {:.4}",
            report.inter,
            report.intra,
            report.ratio()
        );
    }
    Ok(())
}
