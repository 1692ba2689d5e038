mod common;

use common::oracles::grouping_oracle;
use proptest::prelude::*;
use urf::affinity::{count_matrix, fuse, normalize, sum_counts, to_distance};
use urf::data::OmicsMatrix;
use urf::forest::{grow_tree_with_membership, train_forest, tree_seed, ForestConfig};

fn matrix() -> impl Strategy<Value = OmicsMatrix> {
    (10usize..40, 1usize..4).prop_flat_map(|(n, p)| {
        prop::collection::vec(prop::collection::vec(-3.0f64..3.0, p), n)
            .prop_map(|rows| OmicsMatrix::from_rows(&rows).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn counts_match_grouping_oracle(m in matrix(), trees in 1usize..=10, seed in any::<u64>(), min_leaf in 1usize..5) {
        let cfg = ForestConfig { n_trees: trees, mtry: 1, min_leaf, bootstrap: true, seed };
        let f = train_forest(&m, &cfg).unwrap();
        let c = count_matrix(&f, &m).unwrap();
        let oracle = grouping_oracle(&f, &m);
        prop_assert_eq!(c.counts(), oracle.as_slice());
        let a = normalize(&c).unwrap();
        let d = to_distance(&a);
        let n = m.n_samples();
        for i in 0..n {
            prop_assert_eq!(a.get(i, i), 1.0);
            prop_assert_eq!(d.get(i, i), 0.0);
            for j in 0..n {
                prop_assert_eq!(a.get(i, j), a.get(j, i));
                prop_assert!((0.0..=1.0).contains(&a.get(i, j)));
            }
        }
    }

    #[test]
    fn routing_reproduces_growth_membership(m in matrix(), seed in any::<u64>()) {
        let cfg = ForestConfig { n_trees: 1, mtry: 1, min_leaf: 2, bootstrap: true, seed };
        let (tree, membership) = grow_tree_with_membership(&m, &cfg, tree_seed(seed, 0, 0)).unwrap();
        for (sample, leaf) in membership {
            prop_assert_eq!(tree.leaf_of(m.row(sample)), leaf);
        }
    }

    #[test]
    fn fusion_sums_layer_counts(m in matrix(), seed in any::<u64>()) {
        let cfg = ForestConfig { n_trees: 4, mtry: 1, min_leaf: 3, bootstrap: true, seed };
        let f1 = train_forest(&m, &cfg).unwrap();
        let f2 = train_forest(&m, &ForestConfig { seed: seed ^ 1, ..cfg }).unwrap();
        let (c1, c2) = (count_matrix(&f1, &m).unwrap(), count_matrix(&f2, &m).unwrap());
        let sum = sum_counts(&[c1.clone(), c2.clone()]).unwrap();
        for (s, (a, b)) in sum.counts().iter().zip(c1.counts().iter().zip(c2.counts())) {
            prop_assert_eq!(*s, a + b);
        }
        prop_assert_eq!(fuse(&[c1, c2]).unwrap(), normalize(&sum).unwrap());
    }
}

#[test]
fn disjoint_routing_gives_zero_affinity() {
    let rows: Vec<Vec<f64>> = (0..20)
        .map(|i| vec![if i < 10 { 0.0 } else { 100.0 } + i as f64 * 0.01])
        .collect();
    let m = OmicsMatrix::from_rows(&rows).unwrap();
    let cfg = ForestConfig {
        n_trees: 5,
        mtry: 1,
        min_leaf: 5,
        bootstrap: false,
        seed: 3,
    };
    let f = train_forest(&m, &cfg).unwrap();
    let c = count_matrix(&f, &m).unwrap();
    assert_eq!(c.get(0, 19), 0);
    assert_eq!(to_distance(&normalize(&c).unwrap()).get(0, 19), 1.0);
}
