//! Leaf co-occurrence counts, affinity normalization, multi-layer fusion and
//! conversion to distances.

use std::io::Write;

use rayon::prelude::*;

use crate::data::OmicsMatrix;
use crate::error::{Error, Result};
use crate::forest::{assign_leaves, Forest, LeafTable};

/// Symmetric `n x n` count of trees in which two samples share a leaf.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMatrix {
    counts: Vec<u32>,
    n: usize,
    n_trees: u32,
    sample_ids: Vec<String>,
}

impl CountMatrix {
    /// Builds a count matrix from full row-major counts.
    pub fn new(counts: Vec<u32>, n_trees: u32, sample_ids: Vec<String>) -> Result<Self> {
        let n = sample_ids.len();
        if counts.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "{} counts for {n} samples",
                counts.len()
            )));
        }
        for i in 0..n {
            if counts[i * n + i] != n_trees {
                return Err(Error::InvalidValue(format!(
                    "diagonal entry {i} differs from n_trees"
                )));
            }
            for j in 0..i {
                let c = counts[i * n + j];
                if c != counts[j * n + i] || c > n_trees {
                    return Err(Error::InvalidValue(format!("entry ({i}, {j}) is invalid")));
                }
            }
        }
        Ok(Self {
            counts,
            n,
            n_trees,
            sample_ids,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn n_trees(&self) -> u32 {
        self.n_trees
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.counts[i * self.n + j]
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn max(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    /// Element-wise sum with another count matrix over the same samples.
    pub fn add(&self, other: &CountMatrix) -> Result<CountMatrix> {
        if self.sample_ids != other.sample_ids {
            return Err(Error::SampleMismatch(
                "count matrices cover different samples".into(),
            ));
        }
        let n_trees = self
            .n_trees
            .checked_add(other.n_trees)
            .ok_or_else(|| Error::InvalidValue("tree count overflows u32".into()))?;
        Ok(CountMatrix {
            counts: self
                .counts
                .iter()
                .zip(&other.counts)
                .map(|(a, b)| a + b)
                .collect(),
            n: self.n,
            n_trees,
            sample_ids: self.sample_ids.clone(),
        })
    }
}

/// Counts leaf co-occurrences from a routing table.
pub fn count_from_leaves(table: &LeafTable, sample_ids: Vec<String>) -> Result<CountMatrix> {
    let n = table.n_samples();
    if sample_ids.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} ids for {n} samples",
            sample_ids.len()
        )));
    }
    let n_trees =
        u32::try_from(table.n_trees()).map_err(|_| Error::InvalidValue("too many trees".into()))?;
    let upper = (0..table.n_trees())
        .into_par_iter()
        .fold(
            || vec![0u32; n * n],
            |mut acc, t| {
                let leaves = table.tree(t);
                let n_nodes = leaves.iter().max().map_or(0, |&m| m as usize + 1);
                let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
                for (i, &leaf) in leaves.iter().enumerate() {
                    groups[leaf as usize].push(i);
                }
                for g in groups.iter().filter(|g| g.len() > 1) {
                    for (a, &i) in g.iter().enumerate() {
                        for &j in &g[a + 1..] {
                            acc[i * n + j] += 1;
                        }
                    }
                }
                acc
            },
        )
        .reduce(
            || vec![0u32; n * n],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    let mut counts = upper;
    for i in 0..n {
        counts[i * n + i] = n_trees;
        for j in i + 1..n {
            counts[j * n + i] = counts[i * n + j];
        }
    }
    Ok(CountMatrix {
        counts,
        n,
        n_trees,
        sample_ids,
    })
}

/// Number of trees in which each pair of samples lands in the same leaf.
pub fn count_matrix(f: &Forest, layer: &OmicsMatrix) -> Result<CountMatrix> {
    let table = assign_leaves(f, layer)?;
    count_from_leaves(&table, layer.sample_ids().to_vec())
}

/// Symmetric matrix of normalized co-occurrence in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    values: Vec<f64>,
    n: usize,
    sample_ids: Vec<String>,
}

impl AffinityMatrix {
    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_square_csv(w, &self.sample_ids, &self.values)
    }
}

/// Divides every count by the largest one.
pub fn normalize(c: &CountMatrix) -> Result<AffinityMatrix> {
    let max = c.max();
    if max == 0 {
        return Err(Error::InvalidValue("count matrix is all zero".into()));
    }
    let m = f64::from(max);
    Ok(AffinityMatrix {
        values: c.counts.iter().map(|&v| f64::from(v) / m).collect(),
        n: c.n,
        sample_ids: c.sample_ids.clone(),
    })
}

/// Sums per-layer count matrices element-wise.
pub fn sum_counts(layer_counts: &[CountMatrix]) -> Result<CountMatrix> {
    let (first, rest) = layer_counts
        .split_first()
        .ok_or(Error::Empty("count matrices"))?;
    rest.iter().try_fold(first.clone(), |acc, c| acc.add(c))
}

/// Sums per-layer counts, then normalizes by the global maximum.
pub fn fuse(layer_counts: &[CountMatrix]) -> Result<AffinityMatrix> {
    normalize(&sum_counts(layer_counts)?)
}

/// Symmetric non-negative dissimilarities with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    values: Vec<f64>,
    n: usize,
    sample_ids: Vec<String>,
}

impl DistanceMatrix {
    /// Validates and wraps full row-major distances.
    pub fn new(values: Vec<f64>, sample_ids: Vec<String>) -> Result<Self> {
        let n = sample_ids.len();
        if values.len() != n * n {
            return Err(Error::InvalidDistance(format!(
                "{} values for {n} samples",
                values.len()
            )));
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(Error::InvalidDistance(format!(
                    "diagonal entry {i} is not zero"
                )));
            }
            for j in 0..i {
                let v = values[i * n + j];
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::InvalidDistance(format!("entry ({i}, {j}) = {v}")));
                }
                if v != values[j * n + i] {
                    return Err(Error::InvalidDistance(format!(
                        "entry ({i}, {j}) is not symmetric"
                    )));
                }
            }
        }
        Ok(Self {
            values,
            n,
            sample_ids,
        })
    }

    /// Builds from unlabeled rows, naming samples `s0..`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::InvalidDistance(format!(
                "row of length {} in {n}x{n} matrix",
                r.len()
            )));
        }
        Self::new(rows.concat(), (0..n).map(|i| format!("s{i}")).collect())
    }

    /// Pairwise Euclidean distances between the rows of a complete matrix.
    pub fn euclidean(m: &OmicsMatrix) -> Result<Self> {
        if m.has_missing() {
            return Err(Error::InvalidValue(
                "euclidean distance needs a complete matrix".into(),
            ));
        }
        let n = m.n_samples();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = m
                    .row(i)
                    .iter()
                    .zip(m.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                values[i * n + j] = d;
                values[j * n + i] = d;
            }
        }
        Ok(Self {
            values,
            n,
            sample_ids: m.sample_ids().to_vec(),
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_square_csv(w, &self.sample_ids, &self.values)
    }
}

/// `1 - affinity`, with an exact zero diagonal.
pub fn to_distance(a: &AffinityMatrix) -> DistanceMatrix {
    let n = a.n;
    let mut values: Vec<f64> = a.values.iter().map(|v| 1.0 - v).collect();
    for i in 0..n {
        values[i * n + i] = 0.0;
    }
    DistanceMatrix {
        values,
        n,
        sample_ids: a.sample_ids.clone(),
    }
}

fn write_square_csv<W: Write>(w: W, ids: &[String], values: &[f64]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(std::iter::once("sample_id").chain(ids.iter().map(String::as_str)))?;
    let n = ids.len();
    for (i, id) in ids.iter().enumerate() {
        let mut rec = Vec::with_capacity(n + 1);
        rec.push(id.clone());
        rec.extend(values[i * n..(i + 1) * n].iter().map(|v| v.to_string()));
        out.write_record(&rec)?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{ForestConfig, NodeKind, Split, Tree, TreeNode};

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    fn stump_on(threshold: f64) -> Tree {
        let leaf = |id| TreeNode {
            id,
            depth: 1,
            kind: NodeKind::Leaf,
        };
        Tree::new(
            vec![
                TreeNode {
                    id: 0,
                    depth: 0,
                    kind: NodeKind::Internal {
                        split: Split {
                            feature: 0,
                            threshold,
                        },
                        left: 1,
                        right: 2,
                        score: None,
                    },
                },
                leaf(1),
                leaf(2),
            ],
            0,
            0,
        )
        .unwrap()
    }

    fn line(values: &[f64]) -> OmicsMatrix {
        OmicsMatrix::from_rows(&values.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_leaf_trees_count_everything() {
        let f = Forest::new(vec![Tree::stump(0, 0); 4], ForestConfig::default(), 1).unwrap();
        let c = count_matrix(&f, &line(&[1.0, 2.0, 3.0])).unwrap();
        assert!(c.counts().iter().all(|&v| v == 4));
    }

    #[test]
    fn disjoint_samples_never_count() {
        let f = Forest::new(vec![stump_on(5.0); 3], ForestConfig::default(), 1).unwrap();
        let c = count_matrix(&f, &line(&[1.0, 9.0])).unwrap();
        assert_eq!(c.get(0, 1), 0);
        assert_eq!(c.get(1, 1), 3);
    }

    #[test]
    fn normalize_examples() {
        let c = CountMatrix::new(vec![500, 250, 250, 500], 500, ids(2)).unwrap();
        let a = normalize(&c).unwrap();
        assert_eq!(a.get(0, 1), 0.5);
        assert_eq!(a.get(1, 1), 1.0);
        let c = CountMatrix::new(vec![1, 0, 0, 1], 1, ids(2)).unwrap();
        let a = normalize(&c).unwrap();
        assert!(a.values().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn count_matrix_validation() {
        assert!(CountMatrix::new(vec![2, 1, 0, 2], 2, ids(2)).is_err());
        assert!(CountMatrix::new(vec![2, 3, 3, 2], 2, ids(2)).is_err());
        assert!(CountMatrix::new(vec![2, 1, 1, 1], 2, ids(2)).is_err());
    }

    #[test]
    fn fuse_examples() {
        let a = CountMatrix::new(vec![4, 1, 3, 1, 4, 0, 3, 0, 4], 4, ids(3)).unwrap();
        let b = CountMatrix::new(vec![2, 2, 0, 2, 2, 1, 0, 1, 2], 2, ids(3)).unwrap();
        assert_eq!(
            fuse(std::slice::from_ref(&a)).unwrap(),
            normalize(&a).unwrap()
        );
        assert_eq!(
            fuse(&[a.clone(), a.clone()]).unwrap(),
            normalize(&a).unwrap()
        );
        let s = sum_counts(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.counts(), [6, 3, 3, 3, 6, 1, 3, 1, 6]);
        assert_eq!(
            fuse(&[a.clone(), b.clone()]).unwrap(),
            fuse(&[b, a]).unwrap()
        );
        assert!(fuse(&[]).is_err());
        let other = CountMatrix::new(vec![1], 1, vec!["x".into()]).unwrap();
        assert!(matches!(
            sum_counts(&[
                other,
                CountMatrix::new(vec![1], 1, vec!["y".into()]).unwrap()
            ]),
            Err(Error::SampleMismatch(_))
        ));
    }

    #[test]
    fn distance_examples() {
        let c = CountMatrix::new(vec![2, 0, 0, 2], 2, ids(2)).unwrap();
        let d = to_distance(&normalize(&c).unwrap());
        assert_eq!(d.get(0, 0), 0.0);
        assert_eq!(d.get(0, 1), 1.0);
        assert!(DistanceMatrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.0]]).is_err());
        assert!(DistanceMatrix::from_rows(&[vec![0.0, -1.0], vec![-1.0, 0.0]]).is_err());
    }

    #[test]
    fn csv_export_roundtrips_floats() {
        let c = CountMatrix::new(vec![3, 1, 1, 3], 3, ids(2)).unwrap();
        let a = normalize(&c).unwrap();
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let second = text.lines().nth(1).unwrap();
        let v: f64 = second.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(v, 1.0 / 3.0);
        assert!(text.starts_with("sample_id,s0,s1\n"));
    }
}
