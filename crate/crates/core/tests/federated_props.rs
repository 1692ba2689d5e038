mod common;

use proptest::prelude::*;
use serde_json::Value;
use urf::data::MultiOmicsDataset;
use urf::federated::{
    export_model, global_affinity, global_counts, merge_models, simulate, EvalMode, GlobalModel,
    ModelBundle, SimulationConfig, Standardization,
};
use urf::forest::ForestConfig;
use urf::pipeline::{fused_counts, train_layers, KMode, MtryRule};

fn forest(n_trees: usize, seed: u64) -> ForestConfig {
    ForestConfig {
        n_trees,
        mtry: 2,
        min_leaf: 3,
        bootstrap: true,
        seed,
    }
}

fn client_bundles(d: &MultiOmicsDataset, n: usize) -> Vec<ModelBundle> {
    (0..n)
        .map(|c| {
            let forests = train_layers(d, &forest(6, 100 + c as u64), MtryRule::Sqrt).unwrap();
            export_model(&forests, &format!("client_{c}")).unwrap()
        })
        .collect()
}

#[test]
fn single_client_global_equals_local() {
    let (d, _) = common::planted(15, 2.0, 1);
    let forests = train_layers(&d, &forest(20, 5), MtryRule::Sqrt).unwrap();
    let local = fused_counts(&forests, &d).unwrap();
    let global = merge_models(vec![export_model(&forests, "only").unwrap()]).unwrap();
    let via_global = global_counts(&global, &d).unwrap();
    assert_eq!(local.counts(), via_global.counts());
    assert_eq!(local.n_trees(), via_global.n_trees());
}

#[test]
fn merge_order_does_not_change_affinity() {
    let (d, _) = common::planted(10, 2.0, 2);
    let bundles = client_bundles(&d, 3);
    let forward = global_affinity(&merge_models(bundles.clone()).unwrap(), &d).unwrap();
    for order in [[2, 0, 1], [1, 2, 0], [2, 1, 0]] {
        let shuffled = order.iter().map(|&i| bundles[i].clone()).collect();
        assert_eq!(
            global_affinity(&merge_models(shuffled).unwrap(), &d).unwrap(),
            forward
        );
    }
}

#[test]
fn duplicate_clients_are_rejected() {
    let (d, _) = common::planted(10, 2.0, 3);
    let b = client_bundles(&d, 1).remove(0);
    assert!(merge_models(vec![b.clone(), b]).is_err());
    assert!(merge_models(vec![]).is_err());
}

#[test]
fn wire_format_carries_no_sample_data() {
    let (d, _) = common::planted(10, 2.0, 4);
    let bundle = client_bundles(&d, 1).remove(0);
    let text = bundle.to_json().unwrap();
    for id in d.sample_ids() {
        assert!(!text.contains(&format!("\"{id}\"")));
    }
    let v: Value = serde_json::from_str(&text).unwrap();
    let keys = |v: &Value| -> Vec<String> {
        let mut k: Vec<String> = v.as_object().unwrap().keys().cloned().collect();
        k.sort();
        k
    };
    assert_eq!(
        keys(&v),
        ["client_id", "config", "format_version", "layers", "trees"]
    );
    assert_eq!(keys(&v["layers"][0]), ["layer_index", "n_features"]);
    assert_eq!(keys(&v["trees"][0]), ["layer_index", "nodes", "seed"]);
    assert_eq!(
        keys(&v["config"]),
        ["bootstrap", "min_leaf", "mtry", "n_trees", "seed"]
    );
    for tree in v["trees"].as_array().unwrap() {
        for node in tree["nodes"].as_array().unwrap() {
            assert_eq!(
                keys(node),
                ["feature", "id", "leaf", "left", "right", "threshold"]
            );
        }
    }

    let global = merge_models(vec![bundle]).unwrap();
    let g: Value = serde_json::from_str(&global.to_json().unwrap()).unwrap();
    assert_eq!(keys(&g), ["bundles", "format_version", "total_trees"]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn round_trip_routes_identically(seed in any::<u64>(), probes in prop::collection::vec(prop::collection::vec(-4.0f64..6.0, 8), 20)) {
        let (d, _) = common::planted(10, 2.0, seed);
        let forests = train_layers(&d, &forest(8, seed), MtryRule::Sqrt).unwrap();
        let bundle = export_model(&forests, "c").unwrap();
        let back = ModelBundle::from_json(&bundle.to_json().unwrap()).unwrap();
        let global = GlobalModel::from_json(&merge_models(vec![back.clone()]).unwrap().to_json().unwrap()).unwrap();
        let restored = back.layer_forest(0).unwrap();
        let via_global = global.layer_forest(0).unwrap();
        for row in &probes {
            for ((a, b), c) in forests[0].trees().iter().zip(restored.trees()).zip(via_global.trees()) {
                prop_assert_eq!(a.leaf_of(row), b.leaf_of(row));
                prop_assert_eq!(a.leaf_of(row), c.leaf_of(row));
            }
        }
    }
}

#[test]
fn simulation_shape_and_determinism() {
    let (d, labels) = common::planted(12, 2.5, 6);
    let cfg = SimulationConfig {
        n_clients: 3,
        forest: forest(10, 0),
        mtry: MtryRule::Sqrt,
        iterations: 2,
        seed: 9,
        eval: EvalMode::ReferenceAri(labels),
        k_mode: KMode::Fixed { k: 3 },
        standardization: Standardization::PerClient,
    };
    let report = simulate(&d, &cfg).unwrap();
    assert_eq!(report.records.len(), 6);
    for it in 0..2 {
        let mut seen: Vec<String> = report
            .records
            .iter()
            .filter(|r| r.iteration == it)
            .flat_map(|r| r.sample_ids.clone())
            .collect();
        seen.sort();
        let mut all = d.sample_ids().to_vec();
        all.sort();
        assert_eq!(seen, all);
    }
    assert_eq!(report, simulate(&d, &cfg).unwrap());
    assert!(simulate(
        &d,
        &SimulationConfig {
            n_clients: 1,
            ..cfg.clone()
        }
    )
    .is_err());
    assert!(simulate(
        &d,
        &SimulationConfig {
            eval: EvalMode::LogRank,
            ..cfg
        }
    )
    .is_err());
}
