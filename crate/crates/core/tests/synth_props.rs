use proptest::prelude::*;
use urf::synth::{generate, ScenarioKind, ScenarioSpec};

fn spec(kind: ScenarioKind, n: usize, seed: u64) -> ScenarioSpec {
    ScenarioSpec {
        kind,
        n_per_cluster: n,
        seed,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ring_radii_stay_in_their_annulus(sep in 0.0f64..4.0, seed in any::<u64>()) {
        let ds = generate(&spec(ScenarioKind::Rings { separation: sep }, 50, seed)).unwrap();
        for (i, &l) in ds.labels.labels().iter().enumerate() {
            let r = ds.data.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            let lo = if l == 0 { 1.0 } else { 2.0 + sep };
            prop_assert!(r >= lo - 1e-9 && r <= lo + 1.0 + 1e-9);
        }
    }

    #[test]
    fn cluster_means_converge(std in 0.1f64..0.5, seed in any::<u64>()) {
        let n = 400;
        let ds = generate(&spec(ScenarioKind::GlobularEqual { std }, n, seed)).unwrap();
        let centers = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let bound = 4.0 * std / (n as f64).sqrt();
        for (c, center) in centers.iter().enumerate() {
            for (j, &mu) in center.iter().enumerate() {
                let mean = (0..n).map(|i| ds.data.get(c * n + i, j)).sum::<f64>() / n as f64;
                prop_assert!((mean - mu).abs() < bound, "cluster {} feature {}: {}", c, j, mean);
            }
        }
    }

    #[test]
    fn label_counts(frac in 0.0f64..0.2, n in 5usize..60, seed in any::<u64>()) {
        let ds = generate(&spec(ScenarioKind::GlobularOutliers { outlier_fraction: frac }, n, seed)).unwrap();
        let n_out = (frac * (3 * n) as f64).round() as usize;
        prop_assert_eq!(ds.data.n_samples(), 3 * n + n_out);
        let sizes = ds.labels.sizes();
        prop_assert_eq!(sizes.iter().sum::<usize>(), 3 * n + n_out);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for kind in [ScenarioKind::Moons { noise: 0.1 }, ScenarioKind::GlobularVarying { m: 3.0 }] {
            let ds = generate(&spec(kind, n, seed)).unwrap();
            prop_assert_eq!(ds.labels.sizes(), vec![n; kind.n_clusters()]);
        }
    }
}

#[test]
fn varying_spreads_grow_with_m() {
    let ds = generate(&spec(ScenarioKind::GlobularVarying { m: 4.0 }, 2000, 1)).unwrap();
    let want = [0.1, 0.5, 0.9];
    for (c, &sd) in want.iter().enumerate() {
        let xs: Vec<f64> = (0..2000).map(|i| ds.data.get(c * 2000 + i, 0)).collect();
        let mean = xs.iter().sum::<f64>() / 2000.0;
        let est = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 1999.0).sqrt();
        assert!((est - sd).abs() < 0.1 * sd, "cluster {c}: {est}");
    }
}
