//! Groups schools into difficulty bins by their mean score.
//!
//! ```text
//! cargo run --example binning
//! ```

use promptcd::data::{bin_by_average_score, bin_letter};

fn main() -> promptcd::Result<()> {
    let schools: Vec<(String, Vec<u8>)> = (0..10u8)
        .map(|i| {
            let scores = (0..20u8).map(|j| u8::from((j * 7 + i * 3) % 10 < i)).collect();
            (format!("school{i:02}"), scores)
        })
        .collect();
    let bins = bin_by_average_score(schools.iter().map(|(s, v)| (s, v)), 3)?;
    for (school, scores) in &schools {
        let mean = scores.iter().map(|&s| f64::from(s)).sum::<f64>() / scores.len() as f64;
        println!("{school}  mean {mean:.2}  bin {}", bin_letter(bins[school]));
    }
    Ok(())
}
