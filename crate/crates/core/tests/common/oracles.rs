use std::collections::HashMap;

use urf::data::OmicsMatrix;
use urf::forest::Forest;

/// Mean squared difference over unordered pairs.
pub fn pairwise_within(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    let mut count = 0.0;
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            sum += (x[i] - x[j]).powi(2);
            count += 1.0;
        }
    }
    sum / count
}

/// Mean squared difference over cross pairs.
pub fn pairwise_between(l: &[f64], r: &[f64]) -> f64 {
    let mut sum = 0.0;
    for a in l {
        for b in r {
            sum += (a - b).powi(2);
        }
    }
    sum / (l.len() * r.len()) as f64
}

pub fn oracle_score(l: &[f64], r: &[f64]) -> Option<f64> {
    let b = pairwise_between(l, r);
    (b > 0.0).then(|| (pairwise_within(l) + pairwise_within(r)) / 2.0 / b)
}

/// Every feature, every midpoint threshold, full re-partition each time.
pub fn exhaustive(
    cols: &[Vec<f64>],
    features: &[usize],
    min_leaf: usize,
) -> Option<(usize, f64, f64)> {
    let mut best: Option<(usize, f64, f64)> = None;
    for &f in features {
        let mut vals = cols[f].clone();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let t = w[0] + (w[1] - w[0]) / 2.0;
            let left: Vec<f64> = cols[f].iter().copied().filter(|&v| v <= t).collect();
            let right: Vec<f64> = cols[f].iter().copied().filter(|&v| v > t).collect();
            if left.len() < min_leaf || right.len() < min_leaf {
                continue;
            }
            let Some(s) = oracle_score(&left, &right) else {
                continue;
            };
            let better = match best {
                None => true,
                Some((bf, bt, bs)) => {
                    let tol = 1e-12 * s.abs().max(bs.abs()).max(1.0);
                    s < bs - tol || ((s - bs).abs() <= tol && (f, t) < (bf, bt))
                }
            };
            if better {
                best = Some((f, t, s));
            }
        }
    }
    best
}

/// Ward merge cost from raw dissimilarities:
/// 2 nA nB / (nA + nB) * (C_AB - W_AA / 2 - W_BB / 2), where C_AB is the
/// mean squared cross dissimilarity and W_XX = sum of squared within
/// dissimilarities over nX^2. Returned as a height (square root).
fn ward_cost(d2: &[Vec<f64>], a: &[usize], b: &[usize]) -> f64 {
    let mean = |xs: &[usize], ys: &[usize]| {
        let mut s = 0.0;
        for &x in xs {
            for &y in ys {
                s += d2[x][y];
            }
        }
        s / (xs.len() * ys.len()) as f64
    };
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let v = 2.0 * na * nb / (na + nb) * (mean(a, b) - mean(a, a) / 2.0 - mean(b, b) / 2.0);
    v.max(0.0).sqrt()
}

/// O(n^3) agglomeration with explicit member lists.
pub fn naive_ward(d: &[Vec<f64>]) -> Vec<(usize, usize, f64, usize)> {
    let n = d.len();
    let d2: Vec<Vec<f64>> = d
        .iter()
        .map(|r| r.iter().map(|v| v * v).collect())
        .collect();
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut merges = Vec::new();
    for step in 0..n - 1 {
        let mut best: Option<(f64, (usize, usize), usize, usize)> = None;
        for x in 0..clusters.len() {
            for y in x + 1..clusters.len() {
                let h = ward_cost(&d2, &clusters[x].1, &clusters[y].1);
                let ids = {
                    let (a, b) = (clusters[x].0, clusters[y].0);
                    (a.min(b), a.max(b))
                };
                if best.is_none_or(|(bh, bids, _, _)| h < bh || (h == bh && ids < bids)) {
                    best = Some((h, ids, x, y));
                }
            }
        }
        let (h, (a, b), x, y) = best.unwrap();
        let mut members = clusters[x].1.clone();
        members.extend(&clusters[y].1);
        clusters.remove(y);
        clusters.remove(x);
        merges.push((a, b, h, members.len()));
        clusters.push((n + step, members));
    }
    merges
}

pub fn distances(pts: &[Vec<f64>]) -> Vec<Vec<f64>> {
    pts.iter()
        .map(|a| {
            pts.iter()
                .map(|b| {
                    a.iter()
                        .zip(b)
                        .map(|(x, y)| (x - y).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect()
        })
        .collect()
}

/// ARI from pair counts (same/same, same/diff, diff/same, diff/diff).
pub fn pair_count_ari(a: &[usize], b: &[usize]) -> f64 {
    let (mut n11, mut n10, mut n01, mut n00) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => n11 += 1.0,
                (true, false) => n10 += 1.0,
                (false, true) => n01 += 1.0,
                (false, false) => n00 += 1.0,
            }
        }
    }
    let den = (n00 + n01) * (n01 + n11) + (n00 + n10) * (n10 + n11);
    if den == 0.0 {
        1.0
    } else {
        2.0 * (n00 * n11 - n01 * n10) / den
    }
}

/// For every tree, bucket samples by leaf and count each same-bucket pair.
pub fn grouping_oracle(f: &Forest, m: &OmicsMatrix) -> Vec<u32> {
    let n = m.n_samples();
    let mut counts = vec![0u32; n * n];
    for tree in f.trees() {
        let mut buckets: HashMap<usize, Vec<usize>> = HashMap::new();
        for i in 0..n {
            buckets.entry(tree.leaf_of(m.row(i))).or_default().push(i);
        }
        for members in buckets.values() {
            for &i in members {
                for &j in members {
                    counts[i * n + j] += 1;
                }
            }
        }
    }
    counts
}
