//! Unsupervised decision trees grown with the Fixation-Index split rule.
//!
//! A split of a node into `left`/`right` on one feature is scored by the
//! mean within-group dispersion of the two children divided by the
//! between-group dispersion. Lower scores mean better separated children,
//! so the search minimizes the score.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::OmicsMatrix;
use crate::error::{Error, Result};
use crate::seed;

/// Relative tolerance under which two split scores count as tied.
pub const SCORE_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Candidate features drawn per node.
    pub mtry: usize,
    /// Minimum number of growing samples in each child.
    pub min_leaf: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 500,
            mtry: 2,
            min_leaf: 5,
            bootstrap: true,
            seed: 1,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidConfig("n_trees must be positive".into()));
        }
        if self.min_leaf == 0 {
            return Err(Error::InvalidConfig("min_leaf must be positive".into()));
        }
        if self.mtry == 0 || self.mtry > n_features {
            return Err(Error::InvalidConfig(format!(
                "mtry must be in 1..={n_features}, got {}",
                self.mtry
            )));
        }
        Ok(())
    }
}

/// A scored candidate split on one feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub score: f64,
    pub n_left: usize,
    pub n_right: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    /// Samples with `value <= threshold` go left.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NodeKind {
    Leaf,
    Internal {
        split: Split,
        left: usize,
        right: usize,
        /// Split score recorded during growth; absent on imported trees.
        score: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    pub depth: usize,
    pub kind: NodeKind,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<TreeNode>,
    layer_index: usize,
    seed: u64,
}

impl Tree {
    /// Builds a tree from nodes indexed by id, rooted at 0. Children must
    /// have larger ids than their parent and be referenced exactly once.
    pub fn new(mut nodes: Vec<TreeNode>, layer_index: usize, seed: u64) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidValue("tree has no nodes".into()));
        }
        let n = nodes.len();
        let mut referenced = vec![false; n];
        for (pos, node) in nodes.iter().enumerate() {
            if node.id != pos {
                return Err(Error::InvalidValue(format!(
                    "node at position {pos} has id {}",
                    node.id
                )));
            }
            if let NodeKind::Internal {
                split, left, right, ..
            } = node.kind
            {
                if !split.threshold.is_finite() {
                    return Err(Error::InvalidValue(format!(
                        "node {pos} has a non-finite threshold"
                    )));
                }
                for child in [left, right] {
                    if child <= pos || child >= n || referenced[child] {
                        return Err(Error::InvalidValue(format!(
                            "node {pos} has invalid child {child}"
                        )));
                    }
                    referenced[child] = true;
                }
            }
        }
        if let Some(orphan) = (1..n).find(|&i| !referenced[i]) {
            return Err(Error::InvalidValue(format!("node {orphan} is unreachable")));
        }
        // depths follow from the structure
        nodes[0].depth = 0;
        for pos in 0..n {
            if let NodeKind::Internal { left, right, .. } = nodes[pos].kind {
                let d = nodes[pos].depth + 1;
                nodes[left].depth = d;
                nodes[right].depth = d;
            }
        }
        Ok(Self {
            nodes,
            layer_index,
            seed,
        })
    }

    /// A tree with a single leaf.
    pub fn stump(layer_index: usize, seed: u64) -> Self {
        Self {
            nodes: vec![TreeNode {
                id: 0,
                depth: 0,
                kind: NodeKind::Leaf,
            }],
            layer_index,
            seed,
        }
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn layer_index(&self) -> usize {
        self.layer_index
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n.kind {
                NodeKind::Internal { split, .. } => Some(split.feature),
                NodeKind::Leaf => None,
            })
            .max()
    }

    /// Id of the leaf reached by `row`.
    pub fn leaf_of(&self, row: &[f64]) -> usize {
        let mut id = 0;
        loop {
            match self.nodes[id].kind {
                NodeKind::Leaf => return id,
                NodeKind::Internal {
                    split, left, right, ..
                } => {
                    id = if row[split.feature] <= split.threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    /// Node ids visited by `row`, root first, leaf last.
    pub fn path_of(&self, row: &[f64]) -> Vec<usize> {
        let mut path = vec![0];
        let mut id = 0;
        while let NodeKind::Internal {
            split, left, right, ..
        } = self.nodes[id].kind
        {
            id = if row[split.feature] <= split.threshold {
                left
            } else {
                right
            };
            path.push(id);
        }
        path
    }
}

/// Average squared difference over ordered pairs of distinct elements.
/// A single value has no spread and scores 0.
pub fn within_dispersion(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    2.0 * centered_sum_squares(values) / (n - 1) as f64
}

/// Average squared difference over all cross pairs.
pub fn between_dispersion(left: &[f64], right: &[f64]) -> f64 {
    if left.is_empty() || right.is_empty() {
        return 0.0;
    }
    let (ml, mr) = (mean(left), mean(right));
    centered_sum_squares(left) / left.len() as f64
        + centered_sum_squares(right) / right.len() as f64
        + (ml - mr) * (ml - mr)
}

/// Mean within-child dispersion over between-child dispersion.
pub fn fst_score(left: &[f64], right: &[f64]) -> Result<f64> {
    if left.is_empty() || right.is_empty() {
        return Err(Error::InvalidValue("split side is empty".into()));
    }
    let between = between_dispersion(left, right);
    if between.is_nan() || between <= 0.0 {
        return Err(Error::ZeroBetweenDispersion);
    }
    Ok(0.5 * (within_dispersion(left) + within_dispersion(right)) / between)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn centered_sum_squares(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum()
}

/// `true` when `a` beats `b` by more than the tie tolerance.
#[inline]
pub fn score_better(a: f64, b: f64) -> bool {
    a < b - SCORE_TIE_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

/// Midpoint of two distinct sorted values that keeps `lo` on the left.
#[inline]
fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid >= hi {
        lo
    } else {
        mid
    }
}

/// Best threshold on one feature. `values` is sorted in place.
fn best_threshold(feature: usize, values: &mut [f64], min_leaf: usize) -> Option<SplitCandidate> {
    let n = values.len();
    if n < 2 * min_leaf.max(1) {
        return None;
    }
    values.sort_unstable_by(f64::total_cmp);
    if values[0] == values[n - 1] {
        return None;
    }
    let shift = mean(values);
    let (mut tot1, mut tot2) = (0.0, 0.0);
    for v in values.iter() {
        let x = v - shift;
        tot1 += x;
        tot2 += x * x;
    }

    let mut best: Option<(f64, usize)> = None;
    let (mut s1, mut s2) = (0.0, 0.0);
    for s in 1..n {
        let x = values[s - 1] - shift;
        s1 += x;
        s2 += x * x;
        if s < min_leaf || n - s < min_leaf || values[s - 1] == values[s] {
            continue;
        }
        let (nl, nr) = (s as f64, (n - s) as f64);
        let (r1, r2) = (tot1 - s1, tot2 - s2);
        let ssl = (s2 - s1 * s1 / nl).max(0.0);
        let ssr = (r2 - r1 * r1 / nr).max(0.0);
        let wl = if s > 1 { 2.0 * ssl / (nl - 1.0) } else { 0.0 };
        let wr = if n - s > 1 {
            2.0 * ssr / (nr - 1.0)
        } else {
            0.0
        };
        let dm = s1 / nl - r1 / nr;
        let between = ssl / nl + ssr / nr + dm * dm;
        if between.is_nan() || between <= 0.0 {
            continue;
        }
        let score = 0.5 * (wl + wr) / between;
        if best.is_none_or(|(b, _)| score_better(score, b)) {
            best = Some((score, s));
        }
    }

    let (_, s) = best?;
    let (left, right) = values.split_at(s);
    // stored score comes from the two-pass formulas
    let score = fst_score(left, right).ok()?;
    Some(SplitCandidate {
        feature,
        threshold: midpoint(values[s - 1], values[s]),
        score,
        n_left: s,
        n_right: n - s,
    })
}

/// Searches every midpoint between consecutive distinct values of each
/// candidate feature and returns the lowest-scoring valid split.
///
/// `node_values[f]` holds the in-node values of feature `f`. Ties go to the
/// lower feature index, then the lower threshold.
pub fn best_split(
    node_values: &[Vec<f64>],
    candidate_features: &[usize],
    min_leaf: usize,
) -> Option<SplitCandidate> {
    let mut feats = candidate_features.to_vec();
    feats.sort_unstable();
    feats.dedup();
    let mut buf = Vec::new();
    let mut best: Option<SplitCandidate> = None;
    for f in feats {
        buf.clear();
        buf.extend_from_slice(&node_values[f]);
        if let Some(c) = best_threshold(f, &mut buf, min_leaf) {
            if best.is_none_or(|b| score_better(c.score, b.score)) {
                best = Some(c);
            }
        }
    }
    best
}

/// Leaf reached during growth by each growing sample (with bootstrap
/// repeats), as `(sample, leaf id)`.
pub type GrowthMembership = Vec<(usize, usize)>;

fn check_complete(layer: &OmicsMatrix) -> Result<()> {
    if layer.has_missing() {
        return Err(Error::InvalidValue(
            "layer has missing values; impute before growing or routing".into(),
        ));
    }
    Ok(())
}

fn grow_from_columns(
    columns: &[Vec<f64>],
    n: usize,
    cfg: &ForestConfig,
    layer_index: usize,
    tree_seed: u64,
) -> (Tree, GrowthMembership) {
    let p = columns.len();
    let mut rng = seed::rng(tree_seed);
    let growing: Vec<usize> = if cfg.bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };

    let mut nodes = vec![TreeNode {
        id: 0,
        depth: 0,
        kind: NodeKind::Leaf,
    }];
    let mut membership = Vec::with_capacity(growing.len());
    let mut stack = vec![(0usize, growing)];
    let mut buf = Vec::new();
    while let Some((id, samples)) = stack.pop() {
        let depth = nodes[id].depth;
        let split = if samples.len() < 2 * cfg.min_leaf {
            None
        } else {
            let mut feats = index::sample(&mut rng, p, cfg.mtry).into_vec();
            feats.sort_unstable();
            let mut best: Option<SplitCandidate> = None;
            for f in feats {
                buf.clear();
                buf.extend(samples.iter().map(|&i| columns[f][i]));
                if let Some(c) = best_threshold(f, &mut buf, cfg.min_leaf) {
                    if best.is_none_or(|b| score_better(c.score, b.score)) {
                        best = Some(c);
                    }
                }
            }
            best
        };
        match split {
            None => membership.extend(samples.iter().map(|&i| (i, id))),
            Some(c) => {
                let (left_s, right_s): (Vec<usize>, Vec<usize>) = samples
                    .iter()
                    .partition(|&&i| columns[c.feature][i] <= c.threshold);
                let (left, right) = (nodes.len(), nodes.len() + 1);
                for child in [left, right] {
                    nodes.push(TreeNode {
                        id: child,
                        depth: depth + 1,
                        kind: NodeKind::Leaf,
                    });
                }
                nodes[id].kind = NodeKind::Internal {
                    split: Split {
                        feature: c.feature,
                        threshold: c.threshold,
                    },
                    left,
                    right,
                    score: Some(c.score),
                };
                stack.push((right, right_s));
                stack.push((left, left_s));
            }
        }
    }
    membership.sort_unstable();
    (
        Tree {
            nodes,
            layer_index,
            seed: tree_seed,
        },
        membership,
    )
}

/// Grows one tree and also returns where each growing sample ended up.
pub fn grow_tree_with_membership(
    layer: &OmicsMatrix,
    cfg: &ForestConfig,
    tree_seed: u64,
) -> Result<(Tree, GrowthMembership)> {
    cfg.validate(layer.n_features())?;
    check_complete(layer)?;
    let n = layer.n_samples();
    Ok(grow_from_columns(&layer.columns(), n, cfg, 0, tree_seed))
}

pub fn grow_tree(layer: &OmicsMatrix, cfg: &ForestConfig, tree_seed: u64) -> Result<Tree> {
    grow_tree_with_membership(layer, cfg, tree_seed).map(|(t, _)| t)
}

/// Seed of tree `tree` of omics layer `layer_index` under `base`.
pub fn tree_seed(base: u64, layer_index: usize, tree: usize) -> u64 {
    seed::derive_path(base, &[layer_index as u64, tree as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<Tree>,
    config: ForestConfig,
    n_features: usize,
}

impl Forest {
    pub fn new(trees: Vec<Tree>, config: ForestConfig, n_features: usize) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::InvalidConfig("forest has no trees".into()));
        }
        if let Some(t) = trees
            .iter()
            .position(|t| t.max_feature().is_some_and(|f| f >= n_features))
        {
            return Err(Error::DimensionMismatch(format!(
                "tree {t} uses a feature beyond {n_features}"
            )));
        }
        Ok(Self {
            trees,
            config,
            n_features,
        })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// The sub-forest made of the given trees, in the given order.
    pub fn subset(&self, trees: &[usize]) -> Self {
        Self {
            trees: trees.iter().map(|&t| self.trees[t].clone()).collect(),
            config: ForestConfig {
                n_trees: trees.len(),
                ..self.config
            },
            n_features: self.n_features,
        }
    }
}

/// Grows `cfg.n_trees` trees for omics layer 0.
pub fn train_forest(layer: &OmicsMatrix, cfg: &ForestConfig) -> Result<Forest> {
    train_layer_forest(layer, cfg, 0)
}

/// Grows `cfg.n_trees` trees in parallel, tree `i` seeded with
/// [`tree_seed`]`(cfg.seed, layer_index, i)`.
pub fn train_layer_forest(
    layer: &OmicsMatrix,
    cfg: &ForestConfig,
    layer_index: usize,
) -> Result<Forest> {
    cfg.validate(layer.n_features())?;
    check_complete(layer)?;
    let n = layer.n_samples();
    let columns = layer.columns();
    let trees: Vec<Tree> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|i| {
            grow_from_columns(
                &columns,
                n,
                cfg,
                layer_index,
                tree_seed(cfg.seed, layer_index, i),
            )
            .0
        })
        .collect();
    Forest::new(trees, *cfg, layer.n_features())
}

/// Leaf id of every sample in every tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafTable {
    n_samples: usize,
    n_trees: usize,
    leaves: Vec<u32>,
}

impl LeafTable {
    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_trees(&self) -> usize {
        self.n_trees
    }

    pub fn get(&self, sample: usize, tree: usize) -> usize {
        self.leaves[tree * self.n_samples + sample] as usize
    }

    /// Leaf ids of all samples in one tree.
    pub fn tree(&self, tree: usize) -> &[u32] {
        &self.leaves[tree * self.n_samples..(tree + 1) * self.n_samples]
    }
}

fn check_layer(f: &Forest, layer: &OmicsMatrix) -> Result<()> {
    if layer.n_features() != f.n_features() {
        return Err(Error::DimensionMismatch(format!(
            "forest expects {} features, layer has {}",
            f.n_features(),
            layer.n_features()
        )));
    }
    check_complete(layer)
}

/// Routes every sample through every tree.
pub fn assign_leaves(f: &Forest, layer: &OmicsMatrix) -> Result<LeafTable> {
    check_layer(f, layer)?;
    let n = layer.n_samples();
    let leaves: Vec<u32> = f
        .trees()
        .par_iter()
        .flat_map_iter(|t| (0..n).map(move |i| t.leaf_of(layer.row(i)) as u32))
        .collect();
    Ok(LeafTable {
        n_samples: n,
        n_trees: f.n_trees(),
        leaves,
    })
}

/// Per tree, the class label of each node id (`None` for unlabeled nodes).
pub type LeafLabels = Vec<Vec<Option<usize>>>;

/// Labels each leaf with the majority class of the samples routed into it.
/// Ties go to the lower class index; empty leaves stay unlabeled.
pub fn label_leaves(f: &Forest, layer: &OmicsMatrix, labels: &[usize]) -> Result<LeafLabels> {
    let table = assign_leaves(f, layer)?;
    label_leaves_from_table(f, &table, labels)
}

/// [`label_leaves`] on an existing routing table.
pub fn label_leaves_from_table(
    f: &Forest,
    table: &LeafTable,
    labels: &[usize],
) -> Result<LeafLabels> {
    if labels.len() != table.n_samples() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} samples",
            labels.len(),
            table.n_samples()
        )));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    Ok(f.trees()
        .par_iter()
        .enumerate()
        .map(|(t, tree)| {
            let mut votes = vec![vec![0usize; n_classes]; tree.nodes().len()];
            for (i, &leaf) in table.tree(t).iter().enumerate() {
                votes[leaf as usize][labels[i]] += 1;
            }
            votes.iter().map(|v| majority(v)).collect()
        })
        .collect())
}

/// Index of the largest count, lowest index on ties; `None` if all zero.
fn majority(counts: &[usize]) -> Option<usize> {
    let mut best: Option<(usize, usize)> = None;
    for (c, &v) in counts.iter().enumerate() {
        if v > 0 && best.is_none_or(|(_, bv)| v > bv) {
            best = Some((c, v));
        }
    }
    best.map(|(c, _)| c)
}

/// Majority vote over trees of the label of each sample's leaf.
pub fn predict_labels(
    f: &Forest,
    leaf_labels: &[Vec<Option<usize>>],
    layer: &OmicsMatrix,
) -> Result<Vec<usize>> {
    if leaf_labels.len() != f.n_trees() {
        return Err(Error::DimensionMismatch(format!(
            "{} leaf label maps for {} trees",
            leaf_labels.len(),
            f.n_trees()
        )));
    }
    let table = assign_leaves(f, layer)?;
    let all: Vec<usize> = (0..f.n_trees()).collect();
    predict_from_table(&table, leaf_labels, &all)
}

/// Majority vote restricted to the trees listed in `trees`, reading leaves
/// from a routing table of the full forest.
pub fn predict_from_table(
    table: &LeafTable,
    leaf_labels: &[Vec<Option<usize>>],
    trees: &[usize],
) -> Result<Vec<usize>> {
    let n_classes = trees
        .iter()
        .filter_map(|&t| leaf_labels.get(t))
        .flatten()
        .flatten()
        .max()
        .map_or(0, |m| m + 1);
    (0..table.n_samples())
        .map(|i| {
            let mut votes = vec![0usize; n_classes];
            for &t in trees {
                let leaf = table.get(i, t);
                let class = leaf_labels
                    .get(t)
                    .and_then(|l| l.get(leaf))
                    .copied()
                    .flatten()
                    .ok_or(Error::MissingLeafLabel { tree: t, leaf })?;
                votes[class] += 1;
            }
            Ok(majority(&votes).unwrap_or(0))
        })
        .collect()
}
