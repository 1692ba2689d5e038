//! Synthetic benchmark: forest affinity vs Euclidean distances, all
//! clustered with Ward at the true number of clusters.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinity::{count_matrix, normalize, to_distance, DistanceMatrix};
use crate::cluster::{cut, ward_linkage};
use crate::data::standardize;
use crate::error::{Error, Result};
use crate::forest::{train_forest, ForestConfig};
use crate::metrics::adjusted_rand_index;
use crate::seed;
use crate::synth::{generate, ScenarioKind, ScenarioSpec};

pub const METHODS: [&str; 3] = ["urf", "euclidean", "euclidean_scaled"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGrid {
    pub scenario: String,
    pub parameters: Vec<f64>,
    pub n_per_cluster: usize,
}

impl ScenarioGrid {
    /// The published parameter grid for a scenario.
    pub fn standard(scenario: &str) -> Result<Self> {
        let (parameters, n_per_cluster) = match scenario {
            "globular_equal" => (vec![0.1, 0.2, 0.3, 0.4, 0.5], 100),
            "globular_outliers" => (vec![0.02, 0.04, 0.06, 0.08, 0.10], 100),
            "globular_varying" => (vec![1.0, 2.0, 3.0, 4.0, 5.0], 100),
            "rings" => (vec![1.0, 1.5, 2.0, 2.5, 3.0], 200),
            "moons" => (vec![0.05, 0.1, 0.15, 0.2, 0.25], 100),
            other => return Err(Error::InvalidConfig(format!("unknown scenario `{other}`"))),
        };
        Ok(Self {
            scenario: scenario.to_string(),
            parameters,
            n_per_cluster,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub grids: Vec<ScenarioGrid>,
    pub replicates: usize,
    pub forest: ForestConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scenario: String,
    pub param: f64,
    pub replicate: usize,
    pub method: String,
    pub ari: f64,
}

fn ward_ari(d: &DistanceMatrix, k: usize, truth: &[usize]) -> Result<f64> {
    let labels = cut(&ward_linkage(d)?, k)?;
    adjusted_rand_index(labels.labels(), truth)
}

/// ARI of each method on one generated dataset, in `METHODS` order.
pub fn run_replicate(
    kind: ScenarioKind,
    n_per_cluster: usize,
    data_seed: u64,
    forest: &ForestConfig,
) -> Result<[f64; 3]> {
    let ds = generate(&ScenarioSpec {
        kind,
        n_per_cluster,
        seed: data_seed,
    })?;
    let truth = ds.labels.labels();
    let k = ds.labels.k();
    let cfg = ForestConfig {
        mtry: forest.mtry.min(ds.data.n_features()),
        seed: seed::derive(data_seed, 1),
        ..*forest
    };
    let f = train_forest(&ds.data, &cfg)?;
    let urf = to_distance(&normalize(&count_matrix(&f, &ds.data)?)?);
    Ok([
        ward_ari(&urf, k, truth)?,
        ward_ari(&DistanceMatrix::euclidean(&ds.data)?, k, truth)?,
        ward_ari(
            &DistanceMatrix::euclidean(&standardize(&ds.data))?,
            k,
            truth,
        )?,
    ])
}

/// Long-format results, one row per scenario, parameter, replicate and
/// method. Dataset seeds derive from `(seed, scenario, parameter, replicate)`.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.replicates == 0 {
        return Err(Error::InvalidConfig("replicates must be positive".into()));
    }
    let mut jobs = Vec::new();
    for (si, grid) in cfg.grids.iter().enumerate() {
        for (pi, &param) in grid.parameters.iter().enumerate() {
            let kind = ScenarioKind::from_name(&grid.scenario, param)?;
            for r in 0..cfg.replicates {
                let data_seed = seed::derive_path(cfg.seed, &[si as u64, pi as u64, r as u64]);
                jobs.push((grid, kind, param, r, data_seed));
            }
        }
    }
    let results = jobs
        .par_iter()
        .map(|&(grid, kind, param, r, data_seed)| {
            let aris = run_replicate(kind, grid.n_per_cluster, data_seed, &cfg.forest)?;
            Ok(METHODS
                .iter()
                .zip(aris)
                .map(|(m, ari)| BenchRow {
                    scenario: grid.scenario.clone(),
                    param,
                    replicate: r,
                    method: (*m).to_string(),
                    ari,
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(results.into_iter().flatten().collect())
}

pub fn write_results_csv<W: Write>(w: W, rows: &[BenchRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["scenario", "param", "replicate", "method", "ari"])?;
    for r in rows {
        out.write_record([
            r.scenario.clone(),
            r.param.to_string(),
            r.replicate.to_string(),
            r.method.clone(),
            r.ari.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
