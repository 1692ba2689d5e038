//! Clustering and survival evaluation.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::affinity::DistanceMatrix;
use crate::cluster::ClusterAssignment;
use crate::data::SurvivalRecord;
use crate::error::{Error, Result};

/// Cross-tabulation of two labelings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    counts: Vec<Vec<u64>>,
    row_sums: Vec<u64>,
    col_sums: Vec<u64>,
    n: u64,
}

impl ContingencyTable {
    /// Tabulates two label vectors of equal length. Labels may be any
    /// integers; rows and columns follow sorted label order.
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} vs {} labels",
                a.len(),
                b.len()
            )));
        }
        let index = |labels: &[usize]| -> BTreeMap<usize, usize> {
            let mut m: BTreeMap<usize, usize> = labels.iter().map(|&l| (l, 0)).collect();
            for (i, v) in m.values_mut().enumerate() {
                *v = i;
            }
            m
        };
        let (ia, ib) = (index(a), index(b));
        let mut counts = vec![vec![0u64; ib.len()]; ia.len()];
        for (x, y) in a.iter().zip(b) {
            counts[ia[x]][ib[y]] += 1;
        }
        let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..ib.len())
            .map(|c| counts.iter().map(|r| r[c]).sum())
            .collect();
        Ok(Self {
            counts,
            row_sums,
            col_sums,
            n: a.len() as u64,
        })
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn row_sums(&self) -> &[u64] {
        &self.row_sums
    }

    pub fn col_sums(&self) -> &[u64] {
        &self.col_sums
    }

    pub fn n(&self) -> u64 {
        self.n
    }
}

fn choose2(x: u64) -> f64 {
    (x as f64) * (x as f64 - 1.0) / 2.0
}

/// Adjusted Rand index between two label vectors.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    let t = ContingencyTable::new(a, b)?;
    let index: f64 = t.counts.iter().flatten().map(|&c| choose2(c)).sum();
    let sa: f64 = t.row_sums.iter().map(|&c| choose2(c)).sum();
    let sb: f64 = t.col_sums.iter().map(|&c| choose2(c)).sum();
    let total = choose2(t.n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sa * sb / total;
    let max_index = 0.5 * (sa + sb);
    let denom = max_index - expected;
    if denom == 0.0 {
        // both partitions trivial in the same way, hence identical
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}

/// Adjusted Rand index between two assignments of the same samples.
pub fn ari(a: &ClusterAssignment, b: &ClusterAssignment) -> Result<f64> {
    if a.sample_ids() != b.sample_ids() {
        return Err(Error::SampleMismatch(
            "assignments cover different samples".into(),
        ));
    }
    adjusted_rand_index(a.labels(), b.labels())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Silhouette {
    pub mean: f64,
    pub per_sample: Vec<f64>,
}

/// Silhouette widths from precomputed distances. Members of singleton
/// clusters score 0.
pub fn silhouette(d: &DistanceMatrix, a: &ClusterAssignment) -> Result<Silhouette> {
    silhouette_labels(d, a.labels(), a.k())
}

pub(crate) fn silhouette_labels(
    d: &DistanceMatrix,
    labels: &[usize],
    k: usize,
) -> Result<Silhouette> {
    let n = d.n_samples();
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {n} samples",
            labels.len()
        )));
    }
    if k < 2 {
        return Err(Error::KOutOfRange { k, min: 2, max: n });
    }
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let per_sample: Vec<f64> = (0..n)
        .map(|i| {
            let own = labels[i];
            if sizes[own] <= 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for j in 0..n {
                sums[labels[j]] += d.get(i, j);
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            if !b.is_finite() {
                return 0.0;
            }
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                (b - a) / m
            }
        })
        .collect();
    let mean = per_sample.iter().sum::<f64>() / n as f64;
    Ok(Silhouette { mean, per_sample })
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {} values",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InvalidValue("need at least two values".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Upper tail of the chi-square distribution.
pub fn chi_square_sf(x: f64, df: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_ur(df as f64 / 2.0, x / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEvents {
    pub group: usize,
    pub n: usize,
    pub observed: f64,
    pub expected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRankResult {
    pub chi_square: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub groups: Vec<GroupEvents>,
}

/// Pairs each record with its cluster label; unknown ids are an error.
fn label_records<'a>(
    records: &'a [SurvivalRecord],
    a: &ClusterAssignment,
) -> Result<Vec<(&'a SurvivalRecord, usize)>> {
    let index: HashMap<&str, usize> = a
        .sample_ids()
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), a.labels()[i]))
        .collect();
    records
        .iter()
        .map(|r| {
            index
                .get(r.sample_id.as_str())
                .map(|&l| (r, l))
                .ok_or_else(|| Error::UnknownSample(r.sample_id.clone()))
        })
        .collect()
}

/// Multi-group log-rank test with grouped tied event times.
pub fn logrank_test(records: &[SurvivalRecord], a: &ClusterAssignment) -> Result<LogRankResult> {
    let labeled = label_records(records, a)?;
    let present: Vec<usize> = {
        let mut g: Vec<usize> = labeled.iter().map(|&(_, l)| l).collect();
        g.sort_unstable();
        g.dedup();
        g
    };
    if present.len() < 2 {
        return Err(Error::InvalidValue(
            "log-rank test needs at least two nonempty groups".into(),
        ));
    }
    if !labeled.iter().any(|(r, _)| r.event) {
        return Err(Error::AllCensored);
    }
    let g = present.len();
    let slot: HashMap<usize, usize> = present.iter().enumerate().map(|(i, &l)| (l, i)).collect();

    let mut by_time = labeled.clone();
    by_time.sort_by(|x, y| x.0.time.total_cmp(&y.0.time));
    let mut at_risk = vec![0f64; g];
    for &(_, l) in &labeled {
        at_risk[slot[&l]] += 1.0;
    }
    let sizes: Vec<usize> = at_risk.iter().map(|&v| v as usize).collect();

    let mut observed = vec![0f64; g];
    let mut expected = vec![0f64; g];
    let mut cov = vec![vec![0f64; g]; g];
    let mut i = 0;
    while i < by_time.len() {
        let t = by_time[i].0.time;
        let mut j = i;
        let mut deaths = vec![0f64; g];
        let mut leaving = vec![0f64; g];
        while j < by_time.len() && by_time[j].0.time == t {
            let s = slot[&by_time[j].1];
            leaving[s] += 1.0;
            if by_time[j].0.event {
                deaths[s] += 1.0;
            }
            j += 1;
        }
        let d: f64 = deaths.iter().sum();
        let n: f64 = at_risk.iter().sum();
        if d > 0.0 {
            for s in 0..g {
                observed[s] += deaths[s];
                expected[s] += d * at_risk[s] / n;
            }
            if n > 1.0 {
                let factor = d * (n - d) / (n - 1.0);
                for s in 0..g {
                    for u in 0..g {
                        let delta = if s == u { 1.0 } else { 0.0 };
                        cov[s][u] += factor * (at_risk[s] / n) * (delta - at_risk[u] / n);
                    }
                }
            }
        }
        for s in 0..g {
            at_risk[s] -= leaving[s];
        }
        i = j;
    }

    let df = g - 1;
    let diff: Vec<f64> = (0..df).map(|s| observed[s] - expected[s]).collect();
    let reduced: Vec<Vec<f64>> = (0..df).map(|s| cov[s][..df].to_vec()).collect();
    let inv = pseudo_inverse(&reduced);
    let mut chi = 0.0;
    for s in 0..df {
        for u in 0..df {
            chi += diff[s] * inv[s][u] * diff[u];
        }
    }
    let chi = chi.max(0.0);
    Ok(LogRankResult {
        chi_square: chi,
        degrees_of_freedom: df,
        p_value: chi_square_sf(chi, df),
        groups: (0..g)
            .map(|s| GroupEvents {
                group: present[s],
                n: sizes[s],
                observed: observed[s],
                expected: expected[s],
            })
            .collect(),
    })
}

/// Moore-Penrose inverse of a small symmetric matrix via Jacobi rotations.
#[allow(clippy::needless_range_loop)]
fn pseudo_inverse(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect())
        .collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eig: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    let scale = eig.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let tol = scale * n as f64 * 1e-12;
    let mut out = vec![vec![0.0; n]; n];
    for (k, &e) in eig.iter().enumerate() {
        if e.abs() <= tol {
            continue;
        }
        for i in 0..n {
            for j in 0..n {
                out[i][j] += v[i][k] * v[j][k] / e;
            }
        }
    }
    out
}

/// One step of a Kaplan-Meier curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmRow {
    pub group: usize,
    pub time: f64,
    pub at_risk: usize,
    pub events: usize,
    pub survival: f64,
}

/// Product-limit estimate per cluster, one row per distinct observed time.
pub fn km_table(records: &[SurvivalRecord], a: &ClusterAssignment) -> Result<Vec<KmRow>> {
    let labeled = label_records(records, a)?;
    let mut groups: BTreeMap<usize, Vec<&SurvivalRecord>> = BTreeMap::new();
    for (r, l) in labeled {
        groups.entry(l).or_default().push(r);
    }
    let mut rows = Vec::new();
    for (group, mut recs) in groups {
        recs.sort_by(|x, y| x.time.total_cmp(&y.time));
        let mut at_risk = recs.len();
        let mut survival = 1.0;
        let mut i = 0;
        while i < recs.len() {
            let t = recs[i].time;
            let mut j = i;
            let mut events = 0;
            while j < recs.len() && recs[j].time == t {
                events += usize::from(recs[j].event);
                j += 1;
            }
            survival *= 1.0 - events as f64 / at_risk as f64;
            rows.push(KmRow {
                group,
                time: t,
                at_risk,
                events,
                survival,
            });
            at_risk -= j - i;
            i = j;
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assignment(labels: &[usize]) -> ClusterAssignment {
        ClusterAssignment::from_labels(labels.to_vec()).unwrap()
    }

    #[test]
    fn ari_examples() {
        assert_eq!(
            adjusted_rand_index(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(),
            1.0
        );
        assert!((adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap() + 0.5).abs() < 1e-12);
        assert_eq!(
            adjusted_rand_index(&[0, 0, 1, 2], &[5, 5, 9, 7]).unwrap(),
            1.0
        );
        assert_eq!(adjusted_rand_index(&[0, 0, 0], &[1, 1, 1]).unwrap(), 1.0);
        assert!(adjusted_rand_index(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn contingency_marginals() {
        let t = ContingencyTable::new(&[0, 0, 1, 2], &[1, 0, 0, 0]).unwrap();
        assert_eq!(t.row_sums(), [2, 1, 1]);
        assert_eq!(t.col_sums(), [3, 1]);
        assert_eq!(t.n(), 4);
    }

    #[test]
    fn silhouette_examples() {
        let d = DistanceMatrix::from_rows(&[
            vec![0.0, 0.0, 1.0, 1.0],
            vec![0.0, 0.0, 1.0, 1.0],
            vec![1.0, 1.0, 0.0, 0.0],
            vec![1.0, 1.0, 0.0, 0.0],
        ])
        .unwrap();
        let s = silhouette(&d, &assignment(&[0, 0, 1, 1])).unwrap();
        assert_eq!(s.mean, 1.0);
        let s = silhouette(&d, &assignment(&[0, 0, 0, 1])).unwrap();
        assert_eq!(s.per_sample[3], 0.0);
        assert!(silhouette(&d, &assignment(&[0, 0, 0, 0])).is_err());
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
        assert!(matches!(pearson(&x, &[1.0; 4]), Err(Error::ZeroVariance)));
    }

    #[test]
    fn chi_square_reference_point() {
        assert!((chi_square_sf(3.841, 1) - 0.05).abs() < 1e-3);
        assert_eq!(chi_square_sf(0.0, 2), 1.0);
        // df = 2 has the closed form exp(-x/2)
        assert!((chi_square_sf(4.0, 2) - (-2.0f64).exp()).abs() < 1e-12);
    }

    fn recs(spec: &[(f64, bool)]) -> Vec<SurvivalRecord> {
        spec.iter()
            .enumerate()
            .map(|(i, &(t, e))| SurvivalRecord::new(format!("s{i}"), t, e).unwrap())
            .collect()
    }

    #[test]
    fn logrank_identical_groups() {
        let r = recs(&[
            (1.0, true),
            (3.0, false),
            (5.0, true),
            (1.0, true),
            (3.0, false),
            (5.0, true),
        ]);
        let res = logrank_test(&r, &assignment(&[0, 0, 0, 1, 1, 1])).unwrap();
        assert!(res.chi_square.abs() < 1e-12);
        assert!((res.p_value - 1.0).abs() < 1e-12);
        assert_eq!(res.degrees_of_freedom, 1);
    }

    #[test]
    fn logrank_three_groups_and_errors() {
        let r = recs(&[
            (1.0, true),
            (2.0, true),
            (3.0, true),
            (4.0, false),
            (5.0, true),
            (6.0, true),
        ]);
        let res = logrank_test(&r, &assignment(&[0, 0, 1, 1, 2, 2])).unwrap();
        assert_eq!(res.degrees_of_freedom, 2);
        assert!((0.0..=1.0).contains(&res.p_value));
        let censored = recs(&[(1.0, false), (2.0, false)]);
        assert!(matches!(
            logrank_test(&censored, &assignment(&[0, 1])),
            Err(Error::AllCensored)
        ));
        let stranger = vec![SurvivalRecord::new("zz", 1.0, true).unwrap()];
        assert!(matches!(
            logrank_test(&stranger, &assignment(&[0, 1])),
            Err(Error::UnknownSample(_))
        ));
    }

    #[test]
    fn pseudo_inverse_of_singular_matrix() {
        let inv = pseudo_inverse(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        for row in &inv {
            for v in row {
                assert!((v - 0.25).abs() < 1e-12);
            }
        }
        let inv = pseudo_inverse(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        assert!((inv[0][0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((inv[0][1] + 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn km_examples() {
        let r = recs(&[(2.0, false), (4.0, false)]);
        let rows = km_table(&r, &assignment(&[0, 0])).unwrap();
        assert!(rows.iter().all(|r| r.survival == 1.0));
        let r = recs(&[(1.0, true), (2.0, false), (3.0, false), (4.0, false)]);
        let rows = km_table(&r, &assignment(&[0, 0, 0, 0])).unwrap();
        assert_eq!(rows[0].survival, 0.75);
        assert_eq!(rows[0].at_risk, 4);
    }
}
