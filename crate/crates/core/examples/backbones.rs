//! Single-interaction forward passes of the four diagnosis backbones.
//!
//! ```text
//! cargo run --example backbones
//! ```

use promptcd::backbones::{irt_forward, kscd_forward, mirt_forward, ncdm_forward, DenseLayer, KscdNets};
use promptcd::grad::sigmoid;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> promptcd::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let p = sigmoid(irt_forward(0.8, -0.2, 0.0, 0.0));
    println!("IRT   p = {p:.4}");

    let alpha = [0.5, -0.3, 0.2, 0.9];
    let beta = [0.4, 0.1, -0.6, 0.3];
    println!("MIRT  p = {:.4}", sigmoid(mirt_forward(&alpha, &beta, 0.1)?));

    let qrow = [1.0, 0.0, 1.0, 0.0];
    let mastery: Vec<f64> = alpha.iter().map(|&a| sigmoid(a)).collect();
    let diff: Vec<f64> = beta.iter().map(|&b| sigmoid(b)).collect();
    let mut layers = vec![
        DenseLayer::random(4, 8, &mut rng),
        DenseLayer::random(8, 4, &mut rng),
        DenseLayer::random(4, 1, &mut rng),
    ];
    for layer in &mut layers {
        layer.weight.mapv_inplace(f64::abs);
    }
    println!("NCDM  p = {:.4}", sigmoid(ncdm_forward(&mastery, &diff, 0.5, &qrow, &layers)?));

    let nets = KscdNets::random(4, 16, &mut rng);
    let concepts: Vec<Vec<f64>> = (0..4).map(|c| (0..4).map(|j| if c == j { 1.0 } else { 0.0 }).collect()).collect();
    println!("KSCD  p = {:.4}", sigmoid(kscd_forward(&alpha, &beta, &concepts, &qrow, &nets)?));
    Ok(())
}
