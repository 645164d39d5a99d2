//! Compares the analytic gradient of a freshly built source model with
//! central finite differences on a handful of coordinates.
//!
//! ```text
//! cargo run --example gradient_check -- kscd
//! ```

use promptcd::backbones::{BackboneConfig, BackboneKind};
use promptcd::data::{generate_synthetic, SynthConfig};
use promptcd::grad::{evaluate_loss, Differentiable, Session};
use promptcd::model::{ModelConfig, PromptCdModel};
use promptcd::prompt::Variant;

fn main() -> promptcd::Result<()> {
    let kind: BackboneKind = std::env::args().nth(1).as_deref().unwrap_or("ncdm").parse()?;
    let synth = SynthConfig {
        overlap_entities: 20,
        other_entities_per_domain: 10,
        records_per_entity: 5,
        ..SynthConfig::default()
    };
    let bundle = generate_synthetic(&synth, 0)?;
    let config = ModelConfig::new(BackboneConfig::new(kind, synth.concepts), Variant::Ours, synth.aspect);
    let mut model = PromptCdModel::source(&bundle, config, 0)?;

    let records: Vec<_> = bundle.all_records().into_iter().take(64).collect();
    let labels: Vec<f64> = records.iter().map(|r| r.label()).collect();
    let batch = model.encode(&records)?;

    let mut session = Session::new();
    let loss = session.forward(&model, &batch, &labels)?;
    session.backward(&mut model, &loss)?;
    println!("{kind} loss {:.6}", loss.value);

    let h = 1e-5;
    let n_tensors = model.params().iter().count();
    for t in 0..n_tensors {
        let tensor = model.params().iter().nth(t).expect("tensor");
        let Some(i) = tensor.grad.iter().position(|&g| g != 0.0) else {
            continue;
        };
        let (tag, analytic, x) = (tensor.tag.clone(), tensor.grad[i], tensor.values[i]);
        let mut at = |v: f64| -> promptcd::Result<f64> {
            model.params_mut().iter_mut().nth(t).expect("tensor").values[i] = v;
            evaluate_loss(&model, &batch, &labels)
        };
        let numeric = (at(x + h)? - at(x - h)?) / (2.0 * h);
        at(x)?;
        println!("{tag:>24}[{i}]  analytic {analytic:+.6e}  numeric {numeric:+.6e}");
    }
    Ok(())
}
