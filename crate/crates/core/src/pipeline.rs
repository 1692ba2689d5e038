//! End-to-end clustering of a (multi-omics) dataset: one forest per layer,
//! fused co-occurrence counts, Ward linkage, and a cut at a chosen k.

use serde::{Deserialize, Serialize};

use crate::affinity::{
    count_matrix, normalize, sum_counts, to_distance, AffinityMatrix, CountMatrix, DistanceMatrix,
};
use crate::cluster::{
    cut, select_k_from_dendrogram, ward_linkage, ClusterAssignment, Dendrogram, KSelection,
};
use crate::data::MultiOmicsDataset;
use crate::error::{Error, Result};
use crate::forest::{train_layer_forest, Forest, ForestConfig};

/// How many candidate features each node draws, per layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MtryRule {
    /// A fixed count, capped at the layer's feature count.
    Fixed(usize),
    /// `ceil(sqrt(p))` for a layer with `p` features.
    Sqrt,
}

impl MtryRule {
    pub fn resolve(self, n_features: usize) -> usize {
        match self {
            MtryRule::Fixed(m) => m.min(n_features),
            MtryRule::Sqrt => ((n_features as f64).sqrt().ceil() as usize).clamp(1, n_features),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum KMode {
    Fixed {
        k: usize,
    },
    /// Mean silhouette over `k_min..=k_max`, capped at `n - 1`.
    Silhouette {
        k_min: usize,
        k_max: usize,
    },
}

impl Default for KMode {
    fn default() -> Self {
        KMode::Silhouette { k_min: 2, k_max: 6 }
    }
}

/// One forest per layer; layer `l` trees are tagged with `l` and seeded
/// from `(cfg.seed, l, tree)`.
pub fn train_layers(
    d: &MultiOmicsDataset,
    cfg: &ForestConfig,
    mtry: MtryRule,
) -> Result<Vec<Forest>> {
    d.layers()
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let layer_cfg = ForestConfig {
                mtry: mtry.resolve(layer.n_features()),
                ..*cfg
            };
            train_layer_forest(layer, &layer_cfg, l)
        })
        .collect()
}

/// Sum over layers of the per-layer co-occurrence counts.
pub fn fused_counts(forests: &[Forest], d: &MultiOmicsDataset) -> Result<CountMatrix> {
    if forests.len() != d.layers().len() {
        return Err(Error::DimensionMismatch(format!(
            "{} forests for {} layers",
            forests.len(),
            d.layers().len()
        )));
    }
    let per_layer = forests
        .iter()
        .zip(d.layers())
        .map(|(f, layer)| count_matrix(f, layer))
        .collect::<Result<Vec<_>>>()?;
    sum_counts(&per_layer)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub affinity: AffinityMatrix,
    pub distance: DistanceMatrix,
    pub dendrogram: Dendrogram,
    pub assignment: ClusterAssignment,
    pub selection: Option<KSelection>,
}

/// Ward clustering of a distance matrix with k chosen per `k_mode`.
pub fn cluster_distance(
    distance: &DistanceMatrix,
    k_mode: KMode,
) -> Result<(Dendrogram, ClusterAssignment, Option<KSelection>)> {
    let dendrogram = ward_linkage(distance)?;
    let n = distance.n_samples();
    let (k, selection) = match k_mode {
        KMode::Fixed { k } => (k, None),
        KMode::Silhouette { k_min, k_max } => {
            let k_max = k_max.min(n.saturating_sub(1));
            let sel = select_k_from_dendrogram(distance, &dendrogram, k_min, k_max)?;
            (sel.k, Some(sel))
        }
    };
    let assignment = cut(&dendrogram, k)?;
    Ok((dendrogram, assignment, selection))
}

/// Normalizes counts and clusters the resulting `1 - affinity` distances.
pub fn cluster_counts(counts: &CountMatrix, k_mode: KMode) -> Result<ClusterResult> {
    let affinity = normalize(counts)?;
    let distance = to_distance(&affinity);
    let (dendrogram, assignment, selection) = cluster_distance(&distance, k_mode)?;
    Ok(ClusterResult {
        affinity,
        distance,
        dendrogram,
        assignment,
        selection,
    })
}

/// Trains per-layer forests and clusters the fused affinity.
pub fn cluster_dataset(
    d: &MultiOmicsDataset,
    cfg: &ForestConfig,
    mtry: MtryRule,
    k_mode: KMode,
) -> Result<(Vec<Forest>, ClusterResult)> {
    let forests = train_layers(d, cfg, mtry)?;
    let counts = fused_counts(&forests, d)?;
    let result = cluster_counts(&counts, k_mode)?;
    Ok((forests, result))
}
