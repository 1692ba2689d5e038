mod common;

use common::oracles::{exhaustive, pairwise_between, pairwise_within};
use proptest::prelude::*;
use urf::forest::{best_split, between_dispersion, fst_score, within_dispersion};

#[test]
fn fixed_dispersion_values() {
    assert_eq!(within_dispersion(&[5.0]), 0.0);
    assert!((within_dispersion(&[0.0, 2.0]) - 4.0).abs() < 1e-12);
    assert!(
        (within_dispersion(&[0.0, 1.0, 3.0]) - pairwise_within(&[0.0, 1.0, 3.0])).abs() < 1e-12
    );
    assert!((between_dispersion(&[0.0, 2.0], &[1.0, 3.0]) - 3.0).abs() < 1e-12);
    assert!((fst_score(&[0.0, 2.0], &[1.0, 3.0]).unwrap() - 4.0 / 3.0).abs() < 1e-12);
}

fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, usize, Vec<usize>)> {
    (2usize..=30, 1usize..=5, 1usize..=4).prop_flat_map(|(n, p, min_leaf)| {
        let col = prop::collection::vec(
            prop_oneof![(-20i32..20).prop_map(f64::from), -10.0f64..10.0],
            n,
        );
        (
            prop::collection::vec(col, p),
            Just(min_leaf),
            prop::sample::subsequence((0..p).collect::<Vec<_>>(), 1..=p),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn best_split_matches_exhaustive_enumeration((cols, min_leaf, features) in instance()) {
        let got = best_split(&cols, &features, min_leaf);
        let want = exhaustive(&cols, &features, min_leaf);
        match (got, want) {
            (None, None) => {}
            (Some(g), Some((f, t, s))) => {
                prop_assert_eq!(g.feature, f);
                prop_assert_eq!(g.threshold, t);
                prop_assert!((g.score - s).abs() <= 1e-9 * s.abs().max(1.0), "{} vs {}", g.score, s);
                let n_left = cols[f].iter().filter(|&&v| v <= t).count();
                prop_assert_eq!(g.n_left, n_left);
                prop_assert_eq!(g.n_right, cols[f].len() - n_left);
            }
            (g, w) => prop_assert!(false, "got {:?}, oracle {:?}", g, w),
        }
    }

    #[test]
    fn fst_score_is_scale_and_shift_invariant(
        l in prop::collection::vec(-5.0f64..5.0, 1..10),
        r in prop::collection::vec(-5.0f64..5.0, 1..10),
        scale in 0.1f64..10.0,
        shift in -100.0f64..100.0,
    ) {
        if let Ok(s) = fst_score(&l, &r) {
            let tl: Vec<f64> = l.iter().map(|v| v * scale + shift).collect();
            let tr: Vec<f64> = r.iter().map(|v| v * scale + shift).collect();
            let t = fst_score(&tl, &tr).unwrap();
            prop_assert!((s - t).abs() <= 1e-6 * s.abs().max(1.0));
        }
    }

    #[test]
    fn dispersions_match_pair_enumeration(
        l in prop::collection::vec(-50.0f64..50.0, 1..15),
        r in prop::collection::vec(-50.0f64..50.0, 1..15),
    ) {
        prop_assert!((within_dispersion(&l) - pairwise_within(&l)).abs() <= 1e-9 * pairwise_within(&l).max(1.0));
        let b = pairwise_between(&l, &r);
        prop_assert!((between_dispersion(&l, &r) - b).abs() <= 1e-9 * b.max(1.0));
    }
}
