use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Uniform seeded sample of `round(ratio * n)` items for fine-tuning; the rest
/// form the test set. Both halves keep input order.
pub fn split_finetune<T: Clone>(records: &[T], ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("fine-tune ratio {ratio} is outside [0, 1]")));
    }
    let n = records.len();
    let take = ((ratio * n as f64).round() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, take).into_iter() {
        chosen[i] = true;
    }
    let mut finetune = Vec::with_capacity(take);
    let mut test = Vec::with_capacity(n - take);
    for (item, pick) in records.iter().zip(chosen) {
        if pick {
            finetune.push(item.clone());
        } else {
            test.push(item.clone());
        }
    }
    Ok((finetune, test))
}
