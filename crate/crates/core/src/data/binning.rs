use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

/// Sorts schools by mean score (highest first, ties by id) and cuts the
/// ranking into `n_bins` groups whose sizes differ by at most one; the
/// earlier bins take the remainder. Bin 0 holds the strongest schools.
pub fn bin_by_average_score<I, K, V>(per_school: I, n_bins: usize) -> Result<BTreeMap<String, usize>>
where
    I: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<[u8]>,
{
    if n_bins == 0 {
        return Err(Error::Config("need at least one bin".into()));
    }
    let mut seen = BTreeSet::new();
    let mut means = Vec::new();
    for (school, scores) in per_school {
        let school = school.as_ref().to_string();
        let scores = scores.as_ref();
        if scores.is_empty() {
            return Err(Error::Precondition(format!("school `{school}` has no records")));
        }
        if !seen.insert(school.clone()) {
            return Err(Error::Data(format!("school `{school}` listed twice")));
        }
        let mean = scores.iter().map(|&s| f64::from(s)).sum::<f64>() / scores.len() as f64;
        means.push((school, mean));
    }
    let n = means.len();
    if n_bins > n {
        return Err(Error::Config(format!("{n_bins} bins requested for {n} schools")));
    }
    means.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let base = n / n_bins;
    let extra = n % n_bins;
    let mut out = BTreeMap::new();
    let mut it = means.into_iter();
    for bin in 0..n_bins {
        let size = base + usize::from(bin < extra);
        for (school, _) in it.by_ref().take(size) {
            out.insert(school, bin);
        }
    }
    Ok(out)
}

/// `0 -> "A"`, `1 -> "B"`, ... `26 -> "AA"`.
pub fn bin_letter(bin: usize) -> String {
    let mut n = bin + 1;
    let mut s = Vec::new();
    while n > 0 {
        let r = (n - 1) % 26;
        s.push(b'A' + r as u8);
        n = (n - 1) / 26;
    }
    s.reverse();
    String::from_utf8(s).expect("ascii")
}
