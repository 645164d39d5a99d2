//! Generates the synthetic cross-domain benchmark, prints its partition and a
//! fine-tuning split of the target domain.
//!
//! ```text
//! cargo run --example synthesize -- 7
//! ```

use promptcd::data::{generate_synthetic, split_finetune, SynthConfig};

fn main() -> promptcd::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let config = SynthConfig::default();
    let bundle = generate_synthetic(&config, seed)?;

    for domain in bundle.roster().domains() {
        println!("{domain}: {} records", bundle.records(domain).len());
    }
    let partition = bundle.partition();
    println!(
        "{} partition: {} overlapping, {} non-overlapping",
        partition.kind,
        partition.overlap.len(),
        partition.non_overlap.len()
    );
    println!("{} concepts, {} exercises in the Q-matrix", bundle.qmatrix().n_concepts(), bundle.qmatrix().len());

    let (train, test) = split_finetune(bundle.target_records(), 0.1, seed)?;
    println!("target split at ratio 0.1: {} train, {} test", train.len(), test.len());
    Ok(())
}
