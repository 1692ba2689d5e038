//! Tree sharing between clients.
//!
//! Clients exchange only the structure of their trained trees (split
//! features, thresholds and child links). The global model is the
//! concatenation of all client trees, and every client routes its own
//! samples through it to obtain a global affinity over those samples.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinity::{count_matrix, normalize, sum_counts, AffinityMatrix, CountMatrix};
use crate::cluster::ClusterAssignment;
use crate::data::{partition_clients, standardize, MultiOmicsDataset};
use crate::error::{Error, Result};
use crate::forest::{Forest, ForestConfig, NodeKind, Split, Tree, TreeNode};
use crate::metrics::{adjusted_rand_index, logrank_test};
use crate::pipeline::{
    cluster_counts, cluster_dataset, fused_counts, train_layers, KMode, MtryRule,
};
use crate::seed;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerInfo {
    pub layer_index: usize,
    pub n_features: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireNode {
    id: usize,
    leaf: bool,
    feature: Option<usize>,
    threshold: Option<f64>,
    left: Option<usize>,
    right: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireTree {
    layer_index: usize,
    seed: u64,
    nodes: Vec<WireNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireBundle {
    format_version: u32,
    client_id: String,
    config: ForestConfig,
    layers: Vec<LayerInfo>,
    trees: Vec<WireTree>,
}

impl From<&Tree> for WireTree {
    fn from(t: &Tree) -> Self {
        WireTree {
            layer_index: t.layer_index(),
            seed: t.seed(),
            nodes: t
                .nodes()
                .iter()
                .map(|n| match n.kind {
                    NodeKind::Leaf => WireNode {
                        id: n.id,
                        leaf: true,
                        feature: None,
                        threshold: None,
                        left: None,
                        right: None,
                    },
                    NodeKind::Internal {
                        split, left, right, ..
                    } => WireNode {
                        id: n.id,
                        leaf: false,
                        feature: Some(split.feature),
                        threshold: Some(split.threshold),
                        left: Some(left),
                        right: Some(right),
                    },
                })
                .collect(),
        }
    }
}

impl TryFrom<WireTree> for Tree {
    type Error = Error;

    fn try_from(w: WireTree) -> Result<Tree> {
        let nodes = w
            .nodes
            .into_iter()
            .map(|n| {
                let kind = if n.leaf {
                    if n.feature.is_some()
                        || n.threshold.is_some()
                        || n.left.is_some()
                        || n.right.is_some()
                    {
                        return Err(Error::InvalidValue(format!(
                            "leaf {} carries split fields",
                            n.id
                        )));
                    }
                    NodeKind::Leaf
                } else {
                    match (n.feature, n.threshold, n.left, n.right) {
                        (Some(feature), Some(threshold), Some(left), Some(right)) => {
                            NodeKind::Internal {
                                split: Split { feature, threshold },
                                left,
                                right,
                                score: None,
                            }
                        }
                        _ => {
                            return Err(Error::InvalidValue(format!(
                                "internal node {} is incomplete",
                                n.id
                            )))
                        }
                    }
                };
                Ok(TreeNode {
                    id: n.id,
                    depth: 0,
                    kind,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Tree::new(nodes, w.layer_index, w.seed)
    }
}

/// The trees one client shares, grouped by omics layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    client_id: String,
    config: ForestConfig,
    layers: Vec<LayerInfo>,
    trees: Vec<Tree>,
}

impl ModelBundle {
    pub fn client_id(&self) -> &str {
        &self.client_id
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerInfo] {
        &self.layers
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    fn validate(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::EmptyBundle);
        }
        for (l, info) in self.layers.iter().enumerate() {
            if info.layer_index != l {
                return Err(Error::InvalidValue(format!(
                    "layer entry {l} has index {}",
                    info.layer_index
                )));
            }
        }
        for (t, tree) in self.trees.iter().enumerate() {
            let info = self.layers.get(tree.layer_index()).ok_or_else(|| {
                Error::InvalidValue(format!(
                    "tree {t} references unknown layer {}",
                    tree.layer_index()
                ))
            })?;
            if tree.max_feature().is_some_and(|f| f >= info.n_features) {
                return Err(Error::DimensionMismatch(format!(
                    "tree {t} uses a feature beyond layer width"
                )));
            }
        }
        Ok(())
    }

    /// Trees of one layer as a forest.
    pub fn layer_forest(&self, layer: usize) -> Result<Forest> {
        let info = self
            .layers
            .get(layer)
            .ok_or_else(|| Error::InvalidValue(format!("bundle has no layer {layer}")))?;
        let trees: Vec<Tree> = self
            .trees
            .iter()
            .filter(|t| t.layer_index() == layer)
            .cloned()
            .collect();
        Forest::new(
            trees.clone(),
            ForestConfig {
                n_trees: trees.len(),
                ..self.config
            },
            info.n_features,
        )
    }

    /// Serialized form; identical bundles always give identical text.
    pub fn to_json(&self) -> Result<String> {
        let wire = WireBundle {
            format_version: FORMAT_VERSION,
            client_id: self.client_id.clone(),
            config: self.config,
            layers: self.layers.clone(),
            trees: self.trees.iter().map(WireTree::from).collect(),
        };
        Ok(serde_json::to_string_pretty(&wire)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        check_version(&value)?;
        let wire: WireBundle = serde_json::from_value(value)?;
        Self::from_wire(wire)
    }

    fn from_wire(wire: WireBundle) -> Result<Self> {
        let bundle = Self {
            client_id: wire.client_id,
            config: wire.config,
            layers: wire.layers,
            trees: wire
                .trees
                .into_iter()
                .map(Tree::try_from)
                .collect::<Result<_>>()?,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn check_version(value: &serde_json::Value) -> Result<()> {
    let found = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::InvalidValue("missing format_version".into()))?;
    if found != u64::from(FORMAT_VERSION) {
        return Err(Error::VersionMismatch {
            found: u32::try_from(found).unwrap_or(u32::MAX),
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

/// Packs per-layer forests (forest `l` must hold layer-`l` trees) into a
/// shareable bundle.
pub fn export_model(forests: &[Forest], client_id: &str) -> Result<ModelBundle> {
    let first = forests.first().ok_or(Error::EmptyBundle)?;
    let mut layers = Vec::with_capacity(forests.len());
    let mut trees = Vec::new();
    for (l, f) in forests.iter().enumerate() {
        if let Some(t) = f.trees().iter().find(|t| t.layer_index() != l) {
            return Err(Error::InvalidValue(format!(
                "forest {l} holds a tree of layer {}",
                t.layer_index()
            )));
        }
        layers.push(LayerInfo {
            layer_index: l,
            n_features: f.n_features(),
        });
        trees.extend(f.trees().iter().cloned());
    }
    let bundle = ModelBundle {
        client_id: client_id.to_string(),
        config: *first.config(),
        layers,
        trees,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Concatenation of client bundles in client order.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    bundles: Vec<ModelBundle>,
}

#[derive(Serialize)]
struct WireGlobalRef<'a> {
    format_version: u32,
    total_trees: usize,
    bundles: Vec<serde_json::Value>,
    #[serde(skip)]
    _p: std::marker::PhantomData<&'a ()>,
}

impl GlobalModel {
    pub fn bundles(&self) -> &[ModelBundle] {
        &self.bundles
    }

    pub fn total_trees(&self) -> usize {
        self.bundles.iter().map(|b| b.trees.len()).sum()
    }

    pub fn n_layers(&self) -> usize {
        self.bundles[0].layers.len()
    }

    /// All trees of one layer across clients, in client order.
    pub fn layer_forest(&self, layer: usize) -> Result<Forest> {
        let forests = self
            .bundles
            .iter()
            .map(|b| b.layer_forest(layer))
            .collect::<Result<Vec<_>>>()?;
        let trees: Vec<Tree> = forests
            .iter()
            .flat_map(|f| f.trees().iter().cloned())
            .collect();
        Forest::new(
            trees.clone(),
            ForestConfig {
                n_trees: trees.len(),
                ..*forests[0].config()
            },
            forests[0].n_features(),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        let bundles = self
            .bundles
            .iter()
            .map(|b| Ok(serde_json::from_str(&b.to_json()?)?))
            .collect::<Result<Vec<serde_json::Value>>>()?;
        Ok(serde_json::to_string_pretty(&WireGlobalRef {
            format_version: FORMAT_VERSION,
            total_trees: self.total_trees(),
            bundles,
            _p: std::marker::PhantomData,
        })?)
    }

    /// Parses either a global model file or a single bundle.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        check_version(&value)?;
        match value.get("bundles") {
            Some(list) => {
                let list = list
                    .as_array()
                    .ok_or_else(|| Error::InvalidValue("`bundles` is not a list".into()))?;
                let bundles = list
                    .iter()
                    .map(|v| {
                        check_version(v)?;
                        ModelBundle::from_wire(serde_json::from_value(v.clone())?)
                    })
                    .collect::<Result<Vec<_>>>()?;
                merge_models(bundles)
            }
            None => merge_models(vec![ModelBundle::from_wire(serde_json::from_value(
                value,
            )?)?]),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Concatenates bundles after checking that they describe the same
/// feature spaces and come from distinct clients.
pub fn merge_models(bundles: Vec<ModelBundle>) -> Result<GlobalModel> {
    let first = bundles.first().ok_or(Error::Empty("bundles"))?;
    let mut seen = HashSet::new();
    for b in &bundles {
        b.validate()?;
        if !seen.insert(b.client_id.clone()) {
            return Err(Error::DuplicateClient(b.client_id.clone()));
        }
        if b.layers != first.layers {
            return Err(Error::DimensionMismatch(format!(
                "client `{}` has a different feature space than `{}`",
                b.client_id, first.client_id
            )));
        }
    }
    Ok(GlobalModel { bundles })
}

/// Co-occurrence counts of one client's samples over every tree of the
/// global model, summed over layers.
pub fn global_counts(g: &GlobalModel, local: &MultiOmicsDataset) -> Result<CountMatrix> {
    if local.layers().len() != g.n_layers() {
        return Err(Error::DimensionMismatch(format!(
            "model has {} layers, data has {}",
            g.n_layers(),
            local.layers().len()
        )));
    }
    let per_layer = local
        .layers()
        .iter()
        .enumerate()
        .map(|(l, layer)| count_matrix(&g.layer_forest(l)?, layer))
        .collect::<Result<Vec<_>>>()?;
    sum_counts(&per_layer)
}

pub fn global_affinity(g: &GlobalModel, local: &MultiOmicsDataset) -> Result<AffinityMatrix> {
    normalize(&global_counts(g, local)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "labels")]
pub enum EvalMode {
    /// Log-rank p-value of each client's clusters; lower is better.
    LogRank,
    /// ARI against a clustering of the pooled data before partitioning.
    PooledAri,
    /// ARI against given labels, aligned with the dataset's samples.
    ReferenceAri(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Standardization {
    /// Each client z-scores its own samples.
    PerClient,
    /// The pooled data is z-scored once before partitioning.
    Global,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_clients: usize,
    pub forest: ForestConfig,
    pub mtry: MtryRule,
    pub iterations: usize,
    pub seed: u64,
    pub eval: EvalMode,
    pub k_mode: KMode,
    pub standardization: Standardization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    GlobalBetter,
    LocalBetter,
    Tie,
    Undetermined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRecord {
    pub iteration: usize,
    pub client_id: String,
    pub sample_ids: Vec<String>,
    pub k_local: usize,
    pub k_global: usize,
    pub local_metric: Option<f64>,
    pub global_metric: Option<f64>,
    pub labels_local: Vec<usize>,
    pub labels_global: Vec<usize>,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationReport {
    pub seed: u64,
    pub n_clients: usize,
    pub iterations: usize,
    pub metric: String,
    pub records: Vec<ClientRecord>,
}

impl FederationReport {
    /// `(client_id, global wins, local wins, ties)` per client.
    pub fn win_counts(&self) -> Vec<(String, usize, usize, usize)> {
        let mut clients: Vec<String> = self.records.iter().map(|r| r.client_id.clone()).collect();
        clients.dedup();
        let mut ids: Vec<String> = Vec::new();
        for c in clients {
            if !ids.contains(&c) {
                ids.push(c);
            }
        }
        ids.into_iter()
            .map(|c| {
                let recs = self.records.iter().filter(|r| r.client_id == c);
                let (mut g, mut l, mut t) = (0, 0, 0);
                for r in recs {
                    match r.outcome {
                        Outcome::GlobalBetter => g += 1,
                        Outcome::LocalBetter => l += 1,
                        Outcome::Tie => t += 1,
                        Outcome::Undetermined => {}
                    }
                }
                (c, g, l, t)
            })
            .collect()
    }

    pub fn write_winloss_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "iteration",
            "client_id",
            "metric",
            "local",
            "global",
            "k_local",
            "k_global",
            "winner",
        ])?;
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        for r in &self.records {
            let winner = match r.outcome {
                Outcome::GlobalBetter => "global",
                Outcome::LocalBetter => "local",
                Outcome::Tie => "tie",
                Outcome::Undetermined => "undetermined",
            };
            out.write_record([
                r.iteration.to_string(),
                r.client_id.clone(),
                self.metric.clone(),
                fmt(r.local_metric),
                fmt(r.global_metric),
                r.k_local.to_string(),
                r.k_global.to_string(),
                winner.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn standardize_all(d: &MultiOmicsDataset) -> Result<MultiOmicsDataset> {
    d.map_layers(|l| Ok(standardize(l)))
}

struct ClientRun {
    data: MultiOmicsDataset,
    rows: Vec<usize>,
    bundle: ModelBundle,
    local: ClusterAssignment,
}

fn compare(local: Option<f64>, global: Option<f64>, lower_is_better: bool) -> Outcome {
    match (local, global) {
        (Some(l), Some(g)) if l == g => Outcome::Tie,
        (Some(l), Some(g)) => {
            if (g < l) == lower_is_better {
                Outcome::GlobalBetter
            } else {
                Outcome::LocalBetter
            }
        }
        _ => Outcome::Undetermined,
    }
}

/// Repeatedly partitions the data across clients, clusters each client
/// with its own forest and with the concatenated global forest, and
/// scores both.
pub fn simulate(d: &MultiOmicsDataset, cfg: &SimulationConfig) -> Result<FederationReport> {
    if cfg.n_clients < 2 {
        return Err(Error::InvalidConfig(
            "simulation needs at least two clients".into(),
        ));
    }
    if cfg.iterations == 0 {
        return Err(Error::InvalidConfig("iterations must be positive".into()));
    }
    let smallest = d.n_samples() / cfg.n_clients;
    if smallest < 2 * cfg.forest.min_leaf {
        return Err(Error::TooFewSamples {
            needed: 2 * cfg.forest.min_leaf * cfg.n_clients,
            have: d.n_samples(),
        });
    }
    if matches!(cfg.eval, EvalMode::LogRank) && d.survival().is_none() {
        return Err(Error::MissingSurvival);
    }
    let pooled = match cfg.standardization {
        Standardization::Global => standardize_all(d)?,
        _ => d.clone(),
    };
    let reference: Option<Vec<usize>> = match &cfg.eval {
        EvalMode::LogRank => None,
        EvalMode::ReferenceAri(labels) => {
            if labels.len() != d.n_samples() {
                return Err(Error::DimensionMismatch(format!(
                    "{} reference labels for {} samples",
                    labels.len(),
                    d.n_samples()
                )));
            }
            Some(labels.clone())
        }
        EvalMode::PooledAri => {
            let data = match cfg.standardization {
                Standardization::None => d.clone(),
                _ => standardize_all(d)?,
            };
            let forest = ForestConfig {
                seed: seed::derive(cfg.seed, u64::MAX),
                ..cfg.forest
            };
            let (_, res) = cluster_dataset(&data, &forest, cfg.mtry, cfg.k_mode)?;
            Some(res.assignment.labels().to_vec())
        }
    };
    let index_of: std::collections::HashMap<&str, usize> = d
        .sample_ids()
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();

    let mut records = Vec::with_capacity(cfg.iterations * cfg.n_clients);
    for it in 0..cfg.iterations {
        let iter_seed = seed::derive(cfg.seed, it as u64);
        let parts = partition_clients(&pooled, cfg.n_clients, iter_seed)?;
        let runs = parts
            .into_par_iter()
            .enumerate()
            .map(|(c, part)| {
                let data = match cfg.standardization {
                    Standardization::PerClient => standardize_all(&part)?,
                    _ => part,
                };
                let rows: Vec<usize> = data
                    .sample_ids()
                    .iter()
                    .map(|s| index_of[s.as_str()])
                    .collect();
                let forest = ForestConfig {
                    seed: seed::derive(iter_seed, c as u64),
                    ..cfg.forest
                };
                let forests = train_layers(&data, &forest, cfg.mtry)?;
                let counts = fused_counts(&forests, &data)?;
                let local = cluster_counts(&counts, cfg.k_mode)?.assignment;
                let bundle = export_model(&forests, &format!("client_{c}"))?;
                Ok(ClientRun {
                    data,
                    rows,
                    bundle,
                    local,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let global = merge_models(runs.iter().map(|r| r.bundle.clone()).collect())?;
        let client_records = runs
            .into_par_iter()
            .map(|run| {
                let counts = global_counts(&global, &run.data)?;
                let global_labels = cluster_counts(&counts, cfg.k_mode)?.assignment;
                let (local_metric, global_metric, lower_better) = match &reference {
                    Some(reference) => {
                        let truth: Vec<usize> = run.rows.iter().map(|&i| reference[i]).collect();
                        (
                            adjusted_rand_index(run.local.labels(), &truth).ok(),
                            adjusted_rand_index(global_labels.labels(), &truth).ok(),
                            false,
                        )
                    }
                    None => {
                        let surv = run.data.survival().unwrap_or_default();
                        (
                            logrank_test(surv, &run.local).ok().map(|r| r.p_value),
                            logrank_test(surv, &global_labels).ok().map(|r| r.p_value),
                            true,
                        )
                    }
                };
                Ok(ClientRecord {
                    iteration: it,
                    client_id: run.bundle.client_id().to_string(),
                    sample_ids: run.data.sample_ids().to_vec(),
                    k_local: run.local.k(),
                    k_global: global_labels.k(),
                    local_metric,
                    global_metric,
                    labels_local: run.local.labels().to_vec(),
                    labels_global: global_labels.labels().to_vec(),
                    outcome: compare(local_metric, global_metric, lower_better),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        records.extend(client_records);
    }
    Ok(FederationReport {
        seed: cfg.seed,
        n_clients: cfg.n_clients,
        iterations: cfg.iterations,
        metric: match cfg.eval {
            EvalMode::LogRank => "logrank_p".into(),
            EvalMode::PooledAri | EvalMode::ReferenceAri(_) => "ari".into(),
        },
        records,
    })
}
