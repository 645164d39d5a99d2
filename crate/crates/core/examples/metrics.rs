//! AUC, ACC, RMSE and F1 on a small set of predictions.
//!
//! ```text
//! cargo run --example metrics
//! ```

use promptcd::eval::MetricReport;

fn main() -> promptcd::Result<()> {
    let preds = [0.9, 0.8, 0.35, 0.6, 0.2, 0.55, 0.1, 0.7];
    let labels = [1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let m = MetricReport::compute(&preds, &labels, 0.5)?;
    println!("n {}  auc {:.4}  acc {:.4}  rmse {:.4}  f1 {:.4}", m.n, m.auc, m.acc, m.rmse, m.f1);
    Ok(())
}
