//! Cluster-specific feature importance.
//!
//! The forest is grown without labels. Once clusters are known, every
//! sample is routed through the trees with a binary label (target cluster
//! vs rest) and each split is credited with its weighted Gini decrease.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::data::OmicsMatrix;
use crate::error::{Error, Result};
use crate::forest::{Forest, NodeKind, Tree};
use crate::metrics::pearson;

const NEGATIVE_TOLERANCE: f64 = -1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceVector {
    pub cluster_id: usize,
    /// One score per feature, aligned with the layer's feature ids.
    pub scores: Vec<f64>,
    pub normalized: bool,
}

impl ImportanceVector {
    /// Copy scaled so the largest score is 1 (unchanged if all zero).
    pub fn normalized(&self) -> Self {
        let max = self.scores.iter().copied().fold(0.0, f64::max);
        let scores = if max > 0.0 {
            self.scores.iter().map(|s| s / max).collect()
        } else {
            self.scores.clone()
        };
        Self {
            cluster_id: self.cluster_id,
            scores,
            normalized: true,
        }
    }
}

#[inline]
fn gini(total: f64, positive: f64) -> f64 {
    if total == 0.0 {
        return 0.0;
    }
    let p = positive / total;
    2.0 * p * (1.0 - p)
}

/// Per node: (routed samples, positives among them).
fn node_counts(tree: &Tree, layer: &OmicsMatrix, positive: &[bool]) -> Vec<(f64, f64)> {
    let mut counts = vec![(0.0, 0.0); tree.nodes().len()];
    for (i, &pos) in positive.iter().enumerate() {
        for node in tree.path_of(layer.row(i)) {
            counts[node].0 += 1.0;
            if pos {
                counts[node].1 += 1.0;
            }
        }
    }
    counts
}

/// Weighted Gini decrease of every internal node of one tree, as
/// `(node id, split feature, decrease)`.
pub fn tree_impurity_decreases(
    tree: &Tree,
    layer: &OmicsMatrix,
    positive: &[bool],
) -> Vec<(usize, usize, f64)> {
    let n = positive.len() as f64;
    let counts = node_counts(tree, layer, positive);
    tree.nodes()
        .iter()
        .filter_map(|node| match node.kind {
            NodeKind::Leaf => None,
            NodeKind::Internal {
                split, left, right, ..
            } => {
                let (nt, pt) = counts[node.id];
                if nt == 0.0 {
                    return Some((node.id, split.feature, 0.0));
                }
                let (nl, pl) = counts[left];
                let (nr, pr) = counts[right];
                let children = (nl * gini(nl, pl) + nr * gini(nr, pr)) / nt;
                let decrease = (nt / n) * (gini(nt, pt) - children);
                debug_assert!(decrease >= NEGATIVE_TOLERANCE);
                Some((node.id, split.feature, decrease.max(0.0)))
            }
        })
        .collect()
}

fn check_inputs(f: &Forest, layer: &OmicsMatrix, assignment: &ClusterAssignment) -> Result<()> {
    if layer.n_features() != f.n_features() {
        return Err(Error::DimensionMismatch(format!(
            "forest expects {} features, layer has {}",
            f.n_features(),
            layer.n_features()
        )));
    }
    if layer.has_missing() {
        return Err(Error::InvalidValue("layer has missing values".into()));
    }
    if assignment.sample_ids() != layer.sample_ids() {
        return Err(Error::SampleMismatch(
            "assignment and layer cover different samples".into(),
        ));
    }
    Ok(())
}

/// One-vs-all mean decrease in Gini impurity for `cluster_id`, averaged
/// over trees.
pub fn cluster_importance(
    f: &Forest,
    layer: &OmicsMatrix,
    assignment: &ClusterAssignment,
    cluster_id: usize,
) -> Result<ImportanceVector> {
    check_inputs(f, layer, assignment)?;
    if cluster_id >= assignment.k() {
        return Err(Error::KOutOfRange {
            k: cluster_id,
            min: 0,
            max: assignment.k().saturating_sub(1),
        });
    }
    let positive: Vec<bool> = assignment
        .labels()
        .iter()
        .map(|&l| l == cluster_id)
        .collect();
    if !positive.iter().any(|&p| p) {
        return Err(Error::EmptyCluster(cluster_id));
    }
    let p = f.n_features();
    let per_tree: Vec<Vec<f64>> = f
        .trees()
        .par_iter()
        .map(|tree| {
            let mut acc = vec![0.0; p];
            for (_, feature, dec) in tree_impurity_decreases(tree, layer, &positive) {
                acc[feature] += dec;
            }
            acc
        })
        .collect();
    let mut scores = vec![0.0; p];
    for acc in &per_tree {
        for (s, v) in scores.iter_mut().zip(acc) {
            *s += v;
        }
    }
    let t = f.n_trees() as f64;
    for s in &mut scores {
        *s /= t;
    }
    Ok(ImportanceVector {
        cluster_id,
        scores,
        normalized: false,
    })
}

/// Importance vectors for every cluster of the assignment.
pub fn all_cluster_importance(
    f: &Forest,
    layer: &OmicsMatrix,
    assignment: &ClusterAssignment,
) -> Result<Vec<ImportanceVector>> {
    (0..assignment.k())
        .map(|c| cluster_importance(f, layer, assignment, c))
        .collect()
}

/// Pearson correlation between the score vectors of every pair of clusters.
pub fn importance_correlation(vectors: &[ImportanceVector]) -> Result<Vec<Vec<f64>>> {
    if vectors.len() < 2 {
        return Err(Error::InvalidValue(
            "need at least two importance vectors".into(),
        ));
    }
    let len = vectors[0].scores.len();
    if vectors.iter().any(|v| v.scores.len() != len) {
        return Err(Error::DimensionMismatch(
            "importance vectors differ in length".into(),
        ));
    }
    let k = vectors.len();
    let mut out = vec![vec![0.0; k]; k];
    for a in 0..k {
        out[a][a] = 1.0;
        for b in a + 1..k {
            let r = pearson(&vectors[a].scores, &vectors[b].scores)?;
            out[a][b] = r;
            out[b][a] = r;
        }
        if vectors[a].scores.iter().all(|&s| s == vectors[a].scores[0]) {
            return Err(Error::ZeroVariance);
        }
    }
    Ok(out)
}

/// Writes `feature_id, cluster_0, ...`; normalized vectors get a
/// `_normalized` suffix on their column names.
pub fn write_importance_csv<W: Write>(
    w: W,
    feature_ids: &[String],
    vectors: &[ImportanceVector],
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["feature_id".to_string()];
    header.extend(vectors.iter().map(|v| {
        if v.normalized {
            format!("cluster_{}_normalized", v.cluster_id)
        } else {
            format!("cluster_{}", v.cluster_id)
        }
    }));
    out.write_record(&header)?;
    for (j, id) in feature_ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(vectors.iter().map(|v| v.scores[j].to_string()));
        out.write_record(&rec)?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_correlation_csv<W: Write>(
    w: W,
    cluster_ids: &[usize],
    corr: &[Vec<f64>],
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let names: Vec<String> = cluster_ids.iter().map(|c| format!("cluster_{c}")).collect();
    out.write_record(std::iter::once("cluster").chain(names.iter().map(String::as_str)))?;
    for (name, row) in names.iter().zip(corr) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        out.write_record(&rec)?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
