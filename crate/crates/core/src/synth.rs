//! Two-feature synthetic scenarios with known cluster labels.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::data::OmicsMatrix;
use crate::error::{Error, Result};
use crate::seed;

const EQUAL_CENTERS: [[f64; 2]; 3] = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
const OUTLIER_CENTERS: [[f64; 2]; 3] = [[3.0, 0.0], [0.0, 3.0], [3.0, 3.0]];
const OUTLIER_CLUSTER_STD: f64 = 0.25;
const OUTLIER_STD: f64 = 1.0;
const VARYING_CENTERS: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 1.0], [-2.0, 2.0]];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScenarioKind {
    /// Three clusters at (1,0), (0,1), (1,1) sharing one std.
    GlobularEqual { std: f64 },
    /// The equal-std clusters at std 0.25, plus a fraction of points drawn
    /// around (3,0), (0,3), (3,3) with std 1. Each outlier is labeled with
    /// the cluster its generating center stands for, in the same order.
    GlobularOutliers { outlier_fraction: f64 },
    /// Clusters at (0,0), (1,1), (-2,2) with std 0.1, 0.1 + 0.1m, 0.1 + 0.2m.
    GlobularVarying { m: f64 },
    /// Annuli with radii [1, 2] and [2 + separation, 3 + separation].
    Rings { separation: f64 },
    /// Two interleaved half circles with Gaussian noise.
    Moons { noise: f64 },
}

impl ScenarioKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::GlobularEqual { .. } => "globular_equal",
            ScenarioKind::GlobularOutliers { .. } => "globular_outliers",
            ScenarioKind::GlobularVarying { .. } => "globular_varying",
            ScenarioKind::Rings { .. } => "rings",
            ScenarioKind::Moons { .. } => "moons",
        }
    }

    pub fn parameter(&self) -> f64 {
        match *self {
            ScenarioKind::GlobularEqual { std } => std,
            ScenarioKind::GlobularOutliers { outlier_fraction } => outlier_fraction,
            ScenarioKind::GlobularVarying { m } => m,
            ScenarioKind::Rings { separation } => separation,
            ScenarioKind::Moons { noise } => noise,
        }
    }

    /// Builds a kind from its name and single parameter.
    pub fn from_name(name: &str, parameter: f64) -> Result<Self> {
        let kind = match name {
            "globular_equal" => ScenarioKind::GlobularEqual { std: parameter },
            "globular_outliers" => ScenarioKind::GlobularOutliers {
                outlier_fraction: parameter,
            },
            "globular_varying" => ScenarioKind::GlobularVarying { m: parameter },
            "rings" => ScenarioKind::Rings {
                separation: parameter,
            },
            "moons" => ScenarioKind::Moons { noise: parameter },
            other => return Err(Error::InvalidConfig(format!("unknown scenario `{other}`"))),
        };
        kind.validate()?;
        Ok(kind)
    }

    pub fn n_clusters(&self) -> usize {
        match self {
            ScenarioKind::Rings { .. } | ScenarioKind::Moons { .. } => 2,
            _ => 3,
        }
    }

    fn validate(&self) -> Result<()> {
        let (ok, what) = match *self {
            ScenarioKind::GlobularEqual { std } => {
                (std.is_finite() && std > 0.0, "std must be positive")
            }
            ScenarioKind::GlobularOutliers {
                outlier_fraction: f,
            } => (
                (0.0..1.0).contains(&f),
                "outlier_fraction must lie in [0, 1)",
            ),
            ScenarioKind::GlobularVarying { m } => {
                (m.is_finite() && m >= 0.0, "m must be non-negative")
            }
            ScenarioKind::Rings { separation } => (
                separation.is_finite() && separation >= 0.0,
                "separation must be non-negative",
            ),
            ScenarioKind::Moons { noise } => (
                noise.is_finite() && noise >= 0.0,
                "noise must be non-negative",
            ),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(what.into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(flatten)]
    pub kind: ScenarioKind,
    pub n_per_cluster: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, seed: u64) -> Self {
        Self {
            kind,
            n_per_cluster: 100,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub data: OmicsMatrix,
    pub labels: ClusterAssignment,
}

impl LabeledDataset {
    pub fn write_data_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(
            std::iter::once("sample_id").chain(self.data.feature_ids().iter().map(String::as_str)),
        )?;
        for (i, id) in self.data.sample_ids().iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(self.data.row(i).iter().map(f64::to_string));
            out.write_record(&rec)?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn write_labels_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["sample_id", "label"])?;
        for (id, l) in self.labels.sample_ids().iter().zip(self.labels.labels()) {
            out.write_record([id.as_str(), &l.to_string()])?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, center: [f64; 2], std: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    vec![
        center[0] + std * normal.sample(rng),
        center[1] + std * normal.sample(rng),
    ]
}

fn annulus(rng: &mut ChaCha8Rng, r_min: f64, r_max: f64) -> Vec<f64> {
    let angle = rng.random_range(0.0..2.0 * PI);
    let r = rng.random_range(r_min..=r_max);
    vec![r * angle.cos(), r * angle.sin()]
}

/// Points listed cluster by cluster; outliers follow the regular points.
pub fn generate(spec: &ScenarioSpec) -> Result<LabeledDataset> {
    spec.kind.validate()?;
    if spec.n_per_cluster == 0 {
        return Err(Error::InvalidConfig(
            "n_per_cluster must be at least 1".into(),
        ));
    }
    let n = spec.n_per_cluster;
    let mut rng = seed::rng(spec.seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut push = |rows: &mut Vec<Vec<f64>>, row: Vec<f64>, label: usize| {
        rows.push(row);
        labels.push(label);
    };
    match spec.kind {
        ScenarioKind::GlobularEqual { std } => {
            for (c, &center) in EQUAL_CENTERS.iter().enumerate() {
                for _ in 0..n {
                    push(&mut rows, gaussian(&mut rng, center, std), c);
                }
            }
        }
        ScenarioKind::GlobularOutliers { outlier_fraction } => {
            for (c, &center) in EQUAL_CENTERS.iter().enumerate() {
                for _ in 0..n {
                    push(
                        &mut rows,
                        gaussian(&mut rng, center, OUTLIER_CLUSTER_STD),
                        c,
                    );
                }
            }
            let n_out = (outlier_fraction * (3 * n) as f64).round() as usize;
            for i in 0..n_out {
                let c = i % 3;
                push(
                    &mut rows,
                    gaussian(&mut rng, OUTLIER_CENTERS[c], OUTLIER_STD),
                    c,
                );
            }
        }
        ScenarioKind::GlobularVarying { m } => {
            let stds = [0.1, 0.1 + 0.1 * m, 0.1 + 0.2 * m];
            for (c, (&center, &std)) in VARYING_CENTERS.iter().zip(&stds).enumerate() {
                for _ in 0..n {
                    push(&mut rows, gaussian(&mut rng, center, std), c);
                }
            }
        }
        ScenarioKind::Rings { separation } => {
            for (c, r_min) in [1.0, 2.0 + separation].into_iter().enumerate() {
                for _ in 0..n {
                    push(&mut rows, annulus(&mut rng, r_min, r_min + 1.0), c);
                }
            }
        }
        ScenarioKind::Moons { noise } => {
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            for c in 0..2 {
                for _ in 0..n {
                    let t = rng.random_range(0.0..=PI);
                    let (x, y) = if c == 0 {
                        (t.cos(), t.sin())
                    } else {
                        (1.0 - t.cos(), 0.5 - t.sin())
                    };
                    let row = vec![
                        x + noise * normal.sample(&mut rng),
                        y + noise * normal.sample(&mut rng),
                    ];
                    push(&mut rows, row, c);
                }
            }
        }
    }
    let data = OmicsMatrix::from_rows(&rows)?;
    let labels = ClusterAssignment::new(labels, data.sample_ids().to_vec())?;
    Ok(LabeledDataset { data, labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rings_respect_radii() {
        let spec = ScenarioSpec::new(ScenarioKind::Rings { separation: 3.0 }, 7);
        let ds = generate(&spec).unwrap();
        assert_eq!(ds.data.n_samples(), 200);
        for i in 0..200 {
            let r = ds.data.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            let (lo, hi) = if ds.labels.labels()[i] == 0 {
                (1.0, 2.0)
            } else {
                (5.0, 6.0)
            };
            assert!(r >= lo - 1e-12 && r <= hi + 1e-12, "r = {r}");
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = ScenarioSpec::new(ScenarioKind::GlobularEqual { std: 0.2 }, 11);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = ScenarioSpec { seed: 12, ..spec };
        assert_ne!(
            generate(&spec).unwrap().data,
            generate(&other).unwrap().data
        );
    }

    #[test]
    fn outlier_counts_and_labels() {
        let spec = ScenarioSpec::new(
            ScenarioKind::GlobularOutliers {
                outlier_fraction: 0.1,
            },
            3,
        );
        let ds = generate(&spec).unwrap();
        assert_eq!(ds.data.n_samples(), 330);
        assert_eq!(ds.labels.sizes(), [110, 110, 110]);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(generate(&ScenarioSpec::new(
            ScenarioKind::GlobularEqual { std: 0.0 },
            1
        ))
        .is_err());
        assert!(generate(&ScenarioSpec::new(
            ScenarioKind::GlobularOutliers {
                outlier_fraction: 1.5
            },
            1
        ))
        .is_err());
        let zero = ScenarioSpec {
            n_per_cluster: 0,
            ..ScenarioSpec::new(ScenarioKind::Moons { noise: 0.1 }, 1)
        };
        assert!(generate(&zero).is_err());
        assert!(ScenarioKind::from_name("spirals", 1.0).is_err());
    }
}
