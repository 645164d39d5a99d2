//! Prompt attachment, shared-prompt transfer and the Ours+ initializer.
//!
//! ```text
//! cargo run --example prompt_transfer
//! ```

use promptcd::backbones::DenseLayer;
use promptcd::prompt::{attach, averaging_map, detach, init_from_prompt, transfer_shared, PromptDims, Variant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> promptcd::Result<()> {
    let dims = PromptDims { prompt: 3, embed: 4 };
    let prompt = [0.1, -0.2, 0.3];
    let orig = [1.0, 2.0, 3.0, 4.0];
    let joined = attach(&prompt, &orig, dims)?;
    println!("attached: {joined:?}");
    let (p, o) = detach(&joined, dims)?;
    println!("detached: {p:?} | {o:?}");

    let sources = vec![vec![1.0, 0.0, 2.0], vec![3.0, 2.0, 0.0]];
    let s2t = averaging_map(sources.len(), dims.prompt);
    println!("target shared prompt: {:?}", transfer_shared(&sources, &s2t)?);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let init_map = DenseLayer::random(dims.prompt, dims.embed, &mut rng);
    println!("Ours+ orig from prompt: {:?}", init_from_prompt(&prompt, &init_map, Variant::OursPlus)?);
    Ok(())
}
