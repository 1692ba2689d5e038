//! Ward agglomerative clustering, dendrogram cuts, silhouette-based choice
//! of k and the tree-reduction stability diagnostic.

use std::io::Write;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinity::{count_matrix, normalize, to_distance, DistanceMatrix};
use crate::data::OmicsMatrix;
use crate::error::{Error, Result};
use crate::forest::{assign_leaves, label_leaves_from_table, predict_from_table, Forest};
use crate::metrics::{adjusted_rand_index, silhouette_labels};
use crate::seed;

/// Flat cluster labels in `0..k`, every cluster nonempty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    labels: Vec<usize>,
    k: usize,
    sample_ids: Vec<String>,
}

impl ClusterAssignment {
    pub fn new(labels: Vec<usize>, sample_ids: Vec<String>) -> Result<Self> {
        if labels.len() != sample_ids.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} samples",
                labels.len(),
                sample_ids.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Empty("labels"));
        }
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let mut sizes = vec![0usize; k];
        for &l in &labels {
            sizes[l] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::EmptyCluster(empty));
        }
        Ok(Self {
            labels,
            k,
            sample_ids,
        })
    }

    /// Labels for samples named `s0..`.
    pub fn from_labels(labels: Vec<usize>) -> Result<Self> {
        let ids = (0..labels.len()).map(|i| format!("s{i}")).collect();
        Self::new(labels, ids)
    }

    /// Maps arbitrary sortable labels onto `0..k` in sorted order.
    pub fn from_raw<T: Ord + Clone>(raw: &[T], sample_ids: Vec<String>) -> Result<Self> {
        let mut distinct: Vec<T> = raw.to_vec();
        distinct.sort();
        distinct.dedup();
        let labels = raw
            .iter()
            .map(|v| distinct.binary_search(v).unwrap_or_default())
            .collect();
        Self::new(labels, sample_ids)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Restricts to the given sample positions. Labels are kept, so the
    /// result may skip cluster ids; it is returned as a raw label vector.
    pub fn labels_for(&self, rows: &[usize]) -> Vec<usize> {
        rows.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["sample_id", "cluster"])?;
        for (id, l) in self.sample_ids.iter().zip(&self.labels) {
            out.write_record([id.as_str(), &l.to_string()])?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// One agglomeration step. Leaves are clusters `0..n`; merge `i` creates
/// cluster `n + i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    merges: Vec<Merge>,
    n_leaves: usize,
    sample_ids: Vec<String>,
}

impl Dendrogram {
    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["a", "b", "height", "size"])?;
        for m in &self.merges {
            out.write_record([
                m.a.to_string(),
                m.b.to_string(),
                m.height.to_string(),
                m.size.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

#[inline]
fn pair(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// `(dist, pair)` ordering used for every merge decision.
#[inline]
fn key_less(d1: f64, p1: (usize, usize), d2: f64, p2: (usize, usize)) -> bool {
    d1 < d2 || (d1 == d2 && p1 < p2)
}

/// Ward clustering on squared input dissimilarities through the
/// Lance-Williams recurrence. Merge heights are the square roots of the
/// updated dissimilarities, so two points merge at their input distance.
/// Ties go to the smallest cluster-id pair.
pub fn ward_linkage(d: &DistanceMatrix) -> Result<Dendrogram> {
    let n = d.n_samples();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, have: n });
    }
    let mut dist: Vec<f64> = d.values().iter().map(|v| v * v).collect();
    let mut ids: Vec<usize> = (0..n).collect();
    let mut sizes = vec![1usize; n];
    let mut active = vec![true; n];
    let mut nn = vec![usize::MAX; n];
    let mut nn_dist = vec![f64::INFINITY; n];

    let nearest = |s: usize, dist: &[f64], ids: &[usize], active: &[bool]| -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for t in 0..n {
            if t == s || !active[t] {
                continue;
            }
            let v = dist[s * n + t];
            if best.0 == usize::MAX
                || key_less(v, pair(ids[s], ids[t]), best.1, pair(ids[s], ids[best.0]))
            {
                best = (t, v);
            }
        }
        best
    };
    for s in 0..n {
        (nn[s], nn_dist[s]) = nearest(s, &dist, &ids, &active);
    }

    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let mut x = usize::MAX;
        for s in (0..n).filter(|&s| active[s]) {
            if x == usize::MAX
                || key_less(
                    nn_dist[s],
                    pair(ids[s], ids[nn[s]]),
                    nn_dist[x],
                    pair(ids[x], ids[nn[x]]),
                )
            {
                x = s;
            }
        }
        let y = nn[x];
        let dxy = nn_dist[x];
        let (a, b) = pair(ids[x], ids[y]);
        let (nx, ny) = (sizes[x] as f64, sizes[y] as f64);
        merges.push(Merge {
            a,
            b,
            height: dxy.max(0.0).sqrt(),
            size: sizes[x] + sizes[y],
        });

        active[y] = false;
        for k in (0..n).filter(|&k| active[k] && k != x) {
            let nk = sizes[k] as f64;
            let v = ((nx + nk) * dist[k * n + x] + (ny + nk) * dist[k * n + y] - nk * dxy)
                / (nx + ny + nk);
            dist[k * n + x] = v;
            dist[x * n + k] = v;
        }
        ids[x] = n + step;
        sizes[x] += sizes[y];

        if step + 2 == n {
            break;
        }
        (nn[x], nn_dist[x]) = nearest(x, &dist, &ids, &active);
        for k in (0..n).filter(|&k| active[k] && k != x) {
            if nn[k] == x || nn[k] == y {
                (nn[k], nn_dist[k]) = nearest(k, &dist, &ids, &active);
            } else {
                let v = dist[k * n + x];
                if key_less(
                    v,
                    pair(ids[k], ids[x]),
                    nn_dist[k],
                    pair(ids[k], ids[nn[k]]),
                ) {
                    nn[k] = x;
                    nn_dist[k] = v;
                }
            }
        }
    }
    Ok(Dendrogram {
        merges,
        n_leaves: n,
        sample_ids: d.sample_ids().to_vec(),
    })
}

/// Flat clusters from the first `n - k` merges, labeled in order of each
/// cluster's smallest sample index.
pub fn cut(dend: &Dendrogram, k: usize) -> Result<ClusterAssignment> {
    let n = dend.n_leaves;
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, min: 1, max: n });
    }
    let mut parent: Vec<usize> = (0..2 * n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (step, m) in dend.merges.iter().take(n - k).enumerate() {
        let new = n + step;
        let (ra, rb) = (find(&mut parent, m.a), find(&mut parent, m.b));
        parent[ra] = new;
        parent[rb] = new;
    }
    let mut label_of_root = vec![usize::MAX; 2 * n];
    let mut next = 0;
    let labels = (0..n)
        .map(|i| {
            let r = find(&mut parent, i);
            if label_of_root[r] == usize::MAX {
                label_of_root[r] = next;
                next += 1;
            }
            label_of_root[r]
        })
        .collect();
    ClusterAssignment::new(labels, dend.sample_ids.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub k: usize,
    /// Mean silhouette width for each tried k.
    pub scores: Vec<(usize, f64)>,
}

/// Cuts the Ward tree at every k in `k_min..=k_max` and keeps the k with
/// the largest mean silhouette (smaller k on ties).
pub fn select_k_silhouette(d: &DistanceMatrix, k_min: usize, k_max: usize) -> Result<KSelection> {
    let dend = ward_linkage(d)?;
    select_k_from_dendrogram(d, &dend, k_min, k_max)
}

pub fn select_k_from_dendrogram(
    d: &DistanceMatrix,
    dend: &Dendrogram,
    k_min: usize,
    k_max: usize,
) -> Result<KSelection> {
    let n = d.n_samples();
    if k_min < 2 || k_min > k_max || k_max + 1 > n {
        return Err(Error::KOutOfRange {
            k: if k_min < 2 { k_min } else { k_max },
            min: 2,
            max: n.saturating_sub(1),
        });
    }
    let scores = (k_min..=k_max)
        .map(|k| {
            let a = cut(dend, k)?;
            Ok((k, silhouette_labels(d, a.labels(), k)?.mean))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = scores[0];
    for &(k, s) in &scores[1..] {
        if s > best.1 {
            best = (k, s);
        }
    }
    Ok(KSelection { k: best.0, scores })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCell {
    pub k: usize,
    pub n_trees: usize,
    pub ari: Vec<f64>,
}

/// ARI of sub-forest predictions against the full-forest Ward solution,
/// for each k and tree budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub k_range: Vec<usize>,
    pub tree_grid: Vec<usize>,
    pub reps: usize,
    pub cells: Vec<StabilityCell>,
}

pub(crate) fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

impl StabilityReport {
    pub fn cell(&self, k: usize, n_trees: usize) -> Option<&StabilityCell> {
        self.cells.iter().find(|c| c.k == k && c.n_trees == n_trees)
    }

    pub fn median(&self, k: usize, n_trees: usize) -> Option<f64> {
        self.cell(k, n_trees).map(|c| median(&c.ari))
    }

    /// Largest k whose median ARI at the smallest tree budget stays within
    /// `eps` of its median at the largest budget. Falls back to the
    /// smallest k.
    pub fn suggested_k(&self, eps: f64) -> Option<usize> {
        let lo = *self.tree_grid.iter().min()?;
        let hi = *self.tree_grid.iter().max()?;
        let stable = self
            .k_range
            .iter()
            .copied()
            .filter(|&k| match (self.median(k, lo), self.median(k, hi)) {
                (Some(a), Some(b)) => b - a <= eps,
                _ => false,
            })
            .max();
        stable.or_else(|| self.k_range.iter().copied().min())
    }
}

/// For each k, labels every leaf with the majority full-forest Ward label
/// and measures how well random sub-forests of each budget reproduce it.
pub fn stability_diagnostic(
    f: &Forest,
    layer: &OmicsMatrix,
    k_range: &[usize],
    tree_grid: &[usize],
    reps: usize,
    seed: u64,
) -> Result<StabilityReport> {
    if reps == 0 {
        return Err(Error::InvalidConfig("reps must be positive".into()));
    }
    if k_range.is_empty() || tree_grid.is_empty() {
        return Err(Error::InvalidConfig(
            "k_range and tree_grid must be nonempty".into(),
        ));
    }
    let n = layer.n_samples();
    if let Some(&k) = k_range.iter().find(|&&k| k < 2 || k > n) {
        return Err(Error::KOutOfRange { k, min: 2, max: n });
    }
    if let Some(&t) = tree_grid.iter().find(|&&t| t == 0 || t > f.n_trees()) {
        return Err(Error::InvalidConfig(format!(
            "tree budget {t} outside 1..={}",
            f.n_trees()
        )));
    }
    let table = assign_leaves(f, layer)?;
    let dist = to_distance(&normalize(&count_matrix(f, layer)?)?);
    let dend = ward_linkage(&dist)?;

    let per_k = k_range
        .iter()
        .map(|&k| {
            let base = cut(&dend, k)?;
            let leaf_labels = label_leaves_from_table(f, &table, base.labels())?;
            Ok((k, base, leaf_labels))
        })
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, usize, usize)> = (0..per_k.len())
        .flat_map(|ki| {
            tree_grid
                .iter()
                .flat_map(move |&t| (0..reps).map(move |r| (ki, t, r)))
        })
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(ki, t, r)| {
            let (k, base, leaf_labels) = &per_k[ki];
            let mut rng = seed::rng(seed::derive_path(seed, &[*k as u64, t as u64, r as u64]));
            let trees = index::sample(&mut rng, f.n_trees(), t).into_vec();
            let predicted = predict_from_table(&table, leaf_labels, &trees)?;
            adjusted_rand_index(&predicted, base.labels())
        })
        .collect::<Result<Vec<f64>>>()?;

    let mut cells = Vec::new();
    let mut it = results.into_iter();
    for (k, _, _) in &per_k {
        for &t in tree_grid {
            cells.push(StabilityCell {
                k: *k,
                n_trees: t,
                ari: it.by_ref().take(reps).collect(),
            });
        }
    }
    Ok(StabilityReport {
        k_range: k_range.to_vec(),
        tree_grid: tree_grid.to_vec(),
        reps,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn points(xs: &[f64]) -> DistanceMatrix {
        let rows: Vec<Vec<f64>> = xs
            .iter()
            .map(|a| xs.iter().map(|b| (a - b).abs()).collect())
            .collect();
        DistanceMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn two_points() {
        let d = points(&[0.0, 2.5]);
        let dend = ward_linkage(&d).unwrap();
        assert_eq!(dend.merges().len(), 1);
        assert_eq!(dend.merges()[0].height, 2.5);
        assert_eq!(dend.merges()[0].size, 2);
    }

    #[test]
    fn collinear_points() {
        let d = points(&[0.0, 1.0, 10.0]);
        let dend = ward_linkage(&d).unwrap();
        assert_eq!((dend.merges()[0].a, dend.merges()[0].b), (0, 1));
        assert_eq!((dend.merges()[1].a, dend.merges()[1].b), (2, 3));
        let two = cut(&dend, 2).unwrap();
        assert_eq!(two.labels(), [0, 0, 1]);
        assert_eq!(cut(&dend, 1).unwrap().labels(), [0, 0, 0]);
        assert_eq!(cut(&dend, 3).unwrap().labels(), [0, 1, 2]);
        assert!(cut(&dend, 0).is_err());
        assert!(cut(&dend, 4).is_err());
    }

    #[test]
    fn ties_break_on_smallest_pair() {
        let d = points(&[0.0, 1.0, 2.0, 3.0]);
        let dend = ward_linkage(&d).unwrap();
        assert_eq!((dend.merges()[0].a, dend.merges()[0].b), (0, 1));
        assert_eq!((dend.merges()[1].a, dend.merges()[1].b), (2, 3));
    }

    #[test]
    fn silhouette_picks_two_blobs() {
        let d = points(&[0.0, 0.1, 0.2, 0.15, 50.0, 50.1, 50.2, 50.05]);
        let sel = select_k_silhouette(&d, 2, 5).unwrap();
        assert_eq!(sel.k, 2);
        assert_eq!(sel.scores.len(), 4);
        assert!(select_k_silhouette(&d, 1, 3).is_err());
        assert!(select_k_silhouette(&d, 2, 8).is_err());
    }

    #[test]
    fn assignment_validation() {
        assert!(matches!(
            ClusterAssignment::from_labels(vec![0, 2, 2]),
            Err(Error::EmptyCluster(1))
        ));
        let a =
            ClusterAssignment::from_raw(&["b", "a", "b"], vec!["x".into(), "y".into(), "z".into()])
                .unwrap();
        assert_eq!(a.labels(), [1, 0, 1]);
        assert_eq!(a.sizes(), [1, 2]);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
