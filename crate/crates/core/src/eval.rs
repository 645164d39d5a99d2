//! Prediction metrics, embedding cluster distances and embedding export.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::EntityKind;
use crate::error::{Error, Result};
use crate::model::{PromptCdModel, RepStage};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

fn check_inputs(preds: &[f64], labels: &[f64]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    if preds.is_empty() {
        return Err(Error::Metric("no predictions".into()));
    }
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Metric("labels must be 0 or 1".into()));
    }
    if preds.iter().any(|p| !p.is_finite()) {
        return Err(Error::Metric("predictions must be finite".into()));
    }
    Ok(())
}

/// Area under the ROC curve via the Mann-Whitney rank statistic, with tied
/// predictions sharing their average rank.
pub fn auc(preds: &[f64], labels: &[f64]) -> Result<f64> {
    check_inputs(preds, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("AUC needs both positive and negative labels".into()));
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[a].total_cmp(&preds[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && preds[order[j + 1]] == preds[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k] == 1.0).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Accuracy and F1 at `threshold` (a prediction `≥ threshold` counts as
/// positive) and RMSE on the raw probabilities. F1 is 0 when precision and
/// recall are both 0.
pub fn acc_rmse_f1(preds: &[f64], labels: &[f64], threshold: f64) -> Result<(f64, f64, f64)> {
    check_inputs(preds, labels)?;
    let n = preds.len() as f64;
    let (mut tp, mut fp, mut fn_, mut correct, mut sq) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&p, &y) in preds.iter().zip(labels) {
        let hit = p >= threshold;
        match (hit, y == 1.0) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            (false, false) => {}
        }
        if hit == (y == 1.0) {
            correct += 1.0;
        }
        sq += (p - y) * (p - y);
    }
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok((correct / n, (sq / n).sqrt(), f1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc: f64,
    pub acc: f64,
    pub rmse: f64,
    pub f1: f64,
    pub n: usize,
    pub threshold: f64,
}

impl MetricReport {
    pub fn compute(preds: &[f64], labels: &[f64], threshold: f64) -> Result<Self> {
        let auc = auc(preds, labels)?;
        let (acc, rmse, f1) = acc_rmse_f1(preds, labels, threshold)?;
        Ok(Self {
            auc,
            acc,
            rmse,
            f1,
            n: preds.len(),
            threshold,
        })
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "auc={:.6} acc={:.6} rmse={:.6} f1={:.6} n={} threshold={}",
            self.auc, self.acc, self.rmse, self.f1, self.n, self.threshold
        )
    }
}

/// Mean within-group distance to the centroid and mean distance between
/// group centroids, both Euclidean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub intra: f64,
    pub inter: f64,
    pub groups: Vec<String>,
}

impl ClusterReport {
    /// `inter / intra`; infinite when every group is a single point.
    pub fn ratio(&self) -> f64 {
        self.inter / self.intra
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn cluster_distances<G: AsRef<str>>(points: &[Vec<f64>], groups: &[G]) -> Result<ClusterReport> {
    if points.len() != groups.len() {
        return Err(Error::Shape(format!("{} points for {} group labels", points.len(), groups.len())));
    }
    let dim = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("points have different widths".into()));
    }
    let mut members: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
    for (p, g) in points.iter().zip(groups) {
        members.entry(g.as_ref()).or_default().push(p);
    }
    if members.len() < 2 {
        return Err(Error::Metric("cluster distances need at least two groups".into()));
    }
    let centroids: Vec<Vec<f64>> = members
        .values()
        .map(|ps| {
            let mut c = vec![0.0; dim];
            for p in ps {
                for (a, b) in c.iter_mut().zip(p.iter()) {
                    *a += b;
                }
            }
            c.iter_mut().for_each(|a| *a /= ps.len() as f64);
            c
        })
        .collect();
    let intra = members
        .values()
        .zip(&centroids)
        .map(|(ps, c)| ps.iter().map(|p| euclidean(p, c)).sum::<f64>() / ps.len() as f64)
        .sum::<f64>()
        / members.len() as f64;
    let mut inter = 0.0;
    let mut pairs = 0.0;
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            inter += euclidean(&centroids[i], &centroids[j]);
            pairs += 1.0;
        }
    }
    Ok(ClusterReport {
        intra,
        inter: inter / pairs,
        groups: members.keys().map(|g| g.to_string()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub entity: String,
    pub domain: String,
    pub vector: Vec<f64>,
}

/// One row per (domain, entity) slot of `kind` in the model.
pub fn export_embeddings(model: &PromptCdModel, kind: EntityKind, stage: RepStage) -> Result<Vec<EmbeddingRow>> {
    model
        .layout()
        .slots(kind)
        .iter()
        .map(|s| {
            Ok(EmbeddingRow {
                entity: s.id.clone(),
                domain: s.domain.clone(),
                vector: model.representation(kind, &s.domain, &s.id, stage)?,
            })
        })
        .collect()
}

/// Cluster distances of exported rows grouped by domain.
pub fn domain_clusters(rows: &[EmbeddingRow]) -> Result<ClusterReport> {
    let points: Vec<Vec<f64>> = rows.iter().map(|r| r.vector.clone()).collect();
    let groups: Vec<&str> = rows.iter().map(|r| r.domain.as_str()).collect();
    cluster_distances(&points, &groups)
}

/// Writes `entity,domain,v0,v1,...` with a header.
pub fn write_embeddings(path: impl AsRef<Path>, rows: &[EmbeddingRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
    let dim = rows.first().map_or(0, |r| r.vector.len());
    let mut header = vec!["entity".to_string(), "domain".to_string()];
    header.extend((0..dim).map(|i| format!("v{i}")));
    w.write_record(&header).map_err(|e| Error::Data(e.to_string()))?;
    for r in rows {
        let mut fields = vec![r.entity.clone(), r.domain.clone()];
        fields.extend(r.vector.iter().map(|v| v.to_string()));
        w.write_record(&fields).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
