#![allow(dead_code)]

pub mod oracles;

use rand_distr::{Distribution, Normal};
use urf::data::{MultiOmicsDataset, OmicsMatrix};
use urf::seed;

/// Two layers over `per_cluster * 3` samples. Layer 0 has 8 features, the
/// first 3 shifted by cluster; layer 1 has 5 features, the first 2 shifted.
/// Returns the dataset and the planted labels.
pub fn planted(per_cluster: usize, shift: f64, data_seed: u64) -> (MultiOmicsDataset, Vec<usize>) {
    let mut rng = seed::rng(data_seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let n = per_cluster * 3;
    let labels: Vec<usize> = (0..n).map(|i| i / per_cluster).collect();
    let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    let mut layer = |p: usize, informative: usize| {
        let mut values = Vec::with_capacity(n * p);
        for &l in &labels {
            for j in 0..p {
                let mean = if j < informative {
                    shift * ((l + j) % 3) as f64
                } else {
                    0.0
                };
                values.push(mean + noise.sample(&mut rng));
            }
        }
        let features = (0..p).map(|j| format!("f{j}")).collect();
        OmicsMatrix::new(ids.clone(), features, values).unwrap()
    };
    let layers = vec![layer(8, 3), layer(5, 2)];
    (MultiOmicsDataset::new(layers, None).unwrap(), labels)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}
