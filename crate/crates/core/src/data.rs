//! Sample-by-feature matrices, survival records, preprocessing and client
//! partitioning.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

const NA_TOKENS: [&str; 3] = ["NA", "", "NaN"];

/// Dense numeric matrix with one row per sample.
///
/// Missing cells are flagged in the mask and hold `NaN` in `values`.
#[derive(Debug, Clone, PartialEq)]
pub struct OmicsMatrix {
    sample_ids: Vec<String>,
    feature_ids: Vec<String>,
    values: Vec<f64>,
    missing: Vec<bool>,
}

impl OmicsMatrix {
    /// Builds a matrix from row-major values. Non-finite entries are
    /// treated as missing.
    pub fn new(
        sample_ids: Vec<String>,
        feature_ids: Vec<String>,
        mut values: Vec<f64>,
    ) -> Result<Self> {
        let (n, p) = (sample_ids.len(), feature_ids.len());
        if n == 0 {
            return Err(Error::Empty("samples"));
        }
        if p == 0 {
            return Err(Error::Empty("features"));
        }
        if values.len() != n * p {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {n}x{p} matrix",
                values.len()
            )));
        }
        check_unique("sample", &sample_ids)?;
        check_unique("feature", &feature_ids)?;
        let missing: Vec<bool> = values.iter().map(|v| !v.is_finite()).collect();
        for (v, &m) in values.iter_mut().zip(&missing) {
            if m {
                *v = f64::NAN;
            }
        }
        Ok(Self {
            sample_ids,
            feature_ids,
            values,
            missing,
        })
    }

    /// Builds a matrix from rows with generated ids `s0..`, `f0..`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != p) {
            return Err(Error::RaggedRow {
                row: i,
                expected: p,
                found: r.len(),
            });
        }
        Self::new(
            (0..n).map(|i| format!("s{i}")).collect(),
            (0..p).map(|j| format!("f{j}")).collect(),
            rows.iter().flatten().copied().collect(),
        )
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_ids.len()
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn feature_ids(&self) -> &[String] {
        &self.feature_ids
    }

    /// Row-major values; missing cells are `NaN`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn missing_mask(&self) -> &[bool] {
        &self.missing
    }

    #[inline]
    pub fn get(&self, sample: usize, feature: usize) -> f64 {
        self.values[sample * self.n_features() + feature]
    }

    #[inline]
    pub fn is_missing(&self, sample: usize, feature: usize) -> bool {
        self.missing[sample * self.n_features() + feature]
    }

    pub fn row(&self, sample: usize) -> &[f64] {
        let p = self.n_features();
        &self.values[sample * p..(sample + 1) * p]
    }

    pub fn column(&self, feature: usize) -> Vec<f64> {
        (0..self.n_samples())
            .map(|i| self.get(i, feature))
            .collect()
    }

    pub fn n_missing(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    pub fn has_missing(&self) -> bool {
        self.missing.iter().any(|&m| m)
    }

    /// Column-major copy of the values, one `Vec` per feature.
    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.n_features()).map(|j| self.column(j)).collect()
    }

    /// Returns the submatrix of the given rows, in the given order.
    pub fn select_samples(&self, rows: &[usize]) -> Self {
        let p = self.n_features();
        let mut values = Vec::with_capacity(rows.len() * p);
        let mut missing = Vec::with_capacity(rows.len() * p);
        for &i in rows {
            values.extend_from_slice(self.row(i));
            missing.extend_from_slice(&self.missing[i * p..(i + 1) * p]);
        }
        Self {
            sample_ids: rows.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            feature_ids: self.feature_ids.clone(),
            values,
            missing,
        }
    }

    /// Returns the submatrix of the given columns, in the given order.
    pub fn select_features(&self, cols: &[usize]) -> Self {
        let p = self.n_features();
        let mut values = Vec::with_capacity(self.n_samples() * cols.len());
        let mut missing = Vec::with_capacity(self.n_samples() * cols.len());
        for i in 0..self.n_samples() {
            for &j in cols {
                values.push(self.values[i * p + j]);
                missing.push(self.missing[i * p + j]);
            }
        }
        Self {
            sample_ids: self.sample_ids.clone(),
            feature_ids: cols.iter().map(|&j| self.feature_ids[j].clone()).collect(),
            values,
            missing,
        }
    }

    fn with_values(&self, values: Vec<f64>) -> Self {
        let missing = values.iter().map(|v| !v.is_finite()).collect();
        Self {
            sample_ids: self.sample_ids.clone(),
            feature_ids: self.feature_ids.clone(),
            values,
            missing,
        }
    }
}

fn check_unique(kind: &'static str, ids: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId {
                kind,
                id: id.clone(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOptions {
    pub delimiter: u8,
    /// The file stores one feature per row and one sample per column.
    pub transpose: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            transpose: false,
        }
    }
}

fn read_table(path: &Path, delimiter: u8) -> Result<Vec<Vec<String>>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .from_reader(std::io::BufReader::new(file));
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        rows.push(rec.iter().map(|s| s.trim().to_string()).collect::<Vec<_>>());
    }
    Ok(rows)
}

fn parse_cell(cell: &str) -> f64 {
    if NA_TOKENS.contains(&cell) {
        return f64::NAN;
    }
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .unwrap_or(f64::NAN)
}

/// Reads a delimited numeric matrix: header row of feature names, first
/// column of sample ids. `NA`, `NaN`, empty and unparseable cells become
/// missing.
pub fn parse_matrix(path: impl AsRef<Path>, options: ParseOptions) -> Result<OmicsMatrix> {
    let rows = read_table(path.as_ref(), options.delimiter)?;
    let (header, body) = rows.split_first().ok_or(Error::Empty("rows"))?;
    let width = header.len();
    if width < 2 {
        return Err(Error::Empty("columns"));
    }
    if body.is_empty() {
        return Err(Error::Empty("rows"));
    }
    for (i, r) in body.iter().enumerate() {
        if r.len() != width {
            return Err(Error::RaggedRow {
                row: i + 2,
                expected: width,
                found: r.len(),
            });
        }
    }
    let col_ids: Vec<String> = header[1..].to_vec();
    let row_ids: Vec<String> = body.iter().map(|r| r[0].clone()).collect();
    let cells: Vec<f64> = body
        .iter()
        .flat_map(|r| r[1..].iter().map(|c| parse_cell(c)))
        .collect();
    if !options.transpose {
        return OmicsMatrix::new(row_ids, col_ids, cells);
    }
    let (nr, nc) = (row_ids.len(), col_ids.len());
    let mut values = vec![0.0; nr * nc];
    for r in 0..nr {
        for c in 0..nc {
            values[c * nr + r] = cells[r * nc + c];
        }
    }
    OmicsMatrix::new(col_ids, row_ids, values)
}

/// One patient's follow-up: time to event or censoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub sample_id: String,
    pub time: f64,
    /// `true` when the event was observed, `false` when censored.
    pub event: bool,
}

impl SurvivalRecord {
    pub fn new(sample_id: impl Into<String>, time: f64, event: bool) -> Result<Self> {
        if !(time.is_finite() && time >= 0.0) {
            return Err(Error::InvalidValue(format!("survival time {time}")));
        }
        Ok(Self {
            sample_id: sample_id.into(),
            time,
            event,
        })
    }
}

/// Reads a `sample_id,time,event` file with `event` in {0,1}.
pub fn parse_survival(path: impl AsRef<Path>, delimiter: u8) -> Result<Vec<SurvivalRecord>> {
    let path = path.as_ref();
    let rows = read_table(path, delimiter)?;
    let (header, body) = rows.split_first().ok_or(Error::Empty("rows"))?;
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidValue(format!("survival file lacks column `{name}`")))
    };
    let (id_col, time_col, event_col) = (col("sample_id")?, col("time")?, col("event")?);
    let mut out = Vec::with_capacity(body.len());
    for (i, r) in body.iter().enumerate() {
        if r.len() != header.len() {
            return Err(Error::RaggedRow {
                row: i + 2,
                expected: header.len(),
                found: r.len(),
            });
        }
        let time = r[time_col]
            .parse::<f64>()
            .map_err(|_| Error::InvalidValue(format!("time `{}` on row {}", r[time_col], i + 2)))?;
        let event = match r[event_col].as_str() {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::InvalidValue(format!(
                    "event `{other}` on row {}",
                    i + 2
                )))
            }
        };
        out.push(SurvivalRecord::new(r[id_col].clone(), time, event)?);
    }
    check_unique(
        "survival sample",
        &out.iter().map(|r| r.sample_id.clone()).collect::<Vec<_>>(),
    )?;
    Ok(out)
}

/// Omics layers measured on the same samples, plus optional survival.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiOmicsDataset {
    layers: Vec<OmicsMatrix>,
    survival: Option<Vec<SurvivalRecord>>,
}

impl MultiOmicsDataset {
    pub fn new(layers: Vec<OmicsMatrix>, survival: Option<Vec<SurvivalRecord>>) -> Result<Self> {
        let first = layers.first().ok_or(Error::Empty("layers"))?;
        for (l, layer) in layers.iter().enumerate().skip(1) {
            if layer.sample_ids() != first.sample_ids() {
                return Err(Error::SampleMismatch(format!(
                    "layer {l} sample ids differ from layer 0"
                )));
            }
        }
        if let Some(records) = &survival {
            let known: HashSet<&str> = first.sample_ids().iter().map(String::as_str).collect();
            if let Some(r) = records
                .iter()
                .find(|r| !known.contains(r.sample_id.as_str()))
            {
                return Err(Error::UnknownSample(r.sample_id.clone()));
            }
        }
        Ok(Self { layers, survival })
    }

    pub fn single(layer: OmicsMatrix) -> Self {
        Self {
            layers: vec![layer],
            survival: None,
        }
    }

    pub fn layers(&self) -> &[OmicsMatrix] {
        &self.layers
    }

    pub fn survival(&self) -> Option<&[SurvivalRecord]> {
        self.survival.as_deref()
    }

    pub fn n_samples(&self) -> usize {
        self.layers[0].n_samples()
    }

    pub fn sample_ids(&self) -> &[String] {
        self.layers[0].sample_ids()
    }

    /// Restricts every layer and the survival records to the given rows.
    pub fn select_samples(&self, rows: &[usize]) -> Self {
        let layers: Vec<OmicsMatrix> = self.layers.iter().map(|l| l.select_samples(rows)).collect();
        let survival = self.survival.as_ref().map(|recs| {
            let keep: HashSet<&str> = layers[0].sample_ids().iter().map(String::as_str).collect();
            recs.iter()
                .filter(|r| keep.contains(r.sample_id.as_str()))
                .cloned()
                .collect()
        });
        Self { layers, survival }
    }

    /// Applies `f` to every layer.
    pub fn map_layers(&self, f: impl Fn(&OmicsMatrix) -> Result<OmicsMatrix>) -> Result<Self> {
        let layers = self.layers.iter().map(f).collect::<Result<Vec<_>>>()?;
        Self::new(layers, self.survival.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub max_missing_fraction: f64,
    pub impute_k: usize,
    pub top_variance_features: Option<usize>,
    pub standardize: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            max_missing_fraction: 0.2,
            impute_k: 5,
            top_variance_features: None,
            standardize: true,
        }
    }
}

/// Missing-value filter, kNN imputation, variance filter and z-scoring, in
/// that order.
pub fn preprocess(m: &OmicsMatrix, cfg: &PreprocessConfig) -> Result<OmicsMatrix> {
    if !(0.0..=1.0).contains(&cfg.max_missing_fraction) {
        return Err(Error::InvalidConfig(format!(
            "max_missing_fraction {} not in [0, 1]",
            cfg.max_missing_fraction
        )));
    }
    if cfg.impute_k == 0 {
        return Err(Error::InvalidConfig("impute_k must be positive".into()));
    }
    let (n, p) = (m.n_samples(), m.n_features());

    let keep_rows: Vec<usize> = (0..n)
        .filter(|&i| {
            let miss = (0..p).filter(|&j| m.is_missing(i, j)).count();
            miss as f64 / p as f64 <= cfg.max_missing_fraction
        })
        .collect();
    if keep_rows.is_empty() {
        return Err(Error::AllSamplesDropped);
    }
    let keep_cols: Vec<usize> = (0..p)
        .filter(|&j| {
            let miss = keep_rows.iter().filter(|&&i| m.is_missing(i, j)).count();
            miss as f64 / keep_rows.len() as f64 <= cfg.max_missing_fraction
        })
        .collect();
    if keep_cols.is_empty() {
        return Err(Error::AllFeaturesDropped);
    }
    let mut out = m.select_samples(&keep_rows).select_features(&keep_cols);
    if out.n_samples() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            have: out.n_samples(),
        });
    }

    if out.has_missing() {
        out = knn_impute(&out, cfg.impute_k)?;
    }

    if let Some(top) = cfg.top_variance_features {
        if top == 0 {
            return Err(Error::InvalidConfig(
                "top_variance_features must be positive".into(),
            ));
        }
        if top < out.n_features() {
            let vars: Vec<f64> = (0..out.n_features())
                .map(|j| sample_variance(&out.column(j)))
                .collect();
            let mut order: Vec<usize> = (0..vars.len()).collect();
            order.sort_by(|&a, &b| vars[b].total_cmp(&vars[a]).then(a.cmp(&b)));
            let mut chosen = order[..top].to_vec();
            chosen.sort_unstable();
            out = out.select_features(&chosen);
        }
    }

    if cfg.standardize {
        out = standardize(&out);
    }
    Ok(out)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Z-scores every feature with the sample standard deviation. Constant
/// features are centered only, so they become all zero.
pub fn standardize(m: &OmicsMatrix) -> OmicsMatrix {
    let (n, p) = (m.n_samples(), m.n_features());
    let mut values = m.values().to_vec();
    for j in 0..p {
        let col: Vec<f64> = (0..n)
            .map(|i| m.get(i, j))
            .filter(|v| v.is_finite())
            .collect();
        if col.is_empty() {
            continue;
        }
        let mu = mean(&col);
        let sd = sample_variance(&col).sqrt();
        for i in 0..n {
            let v = &mut values[i * p + j];
            if v.is_finite() {
                *v = if sd > 0.0 { (*v - mu) / sd } else { 0.0 };
            }
        }
    }
    m.with_values(values)
}

/// Distance between two rows over co-observed features, scaled by the
/// number of shared features. `None` when nothing is shared.
fn coobserved_distance(m: &OmicsMatrix, a: usize, b: usize) -> Option<f64> {
    let (ra, rb) = (m.row(a), m.row(b));
    let mut sum = 0.0;
    let mut shared = 0usize;
    for (x, y) in ra.iter().zip(rb) {
        if x.is_finite() && y.is_finite() {
            sum += (x - y) * (x - y);
            shared += 1;
        }
    }
    (shared > 0).then(|| (sum / shared as f64).sqrt())
}

/// Fills missing cells with the mean of the same feature over the `k`
/// nearest samples. Observed cells are never altered.
pub fn knn_impute(m: &OmicsMatrix, k: usize) -> Result<OmicsMatrix> {
    let (n, p) = (m.n_samples(), m.n_features());
    if k == 0 || k >= n {
        return Err(Error::ImputeK { k, n });
    }
    let global_means: Vec<f64> = (0..p)
        .map(|j| {
            let obs: Vec<f64> = (0..n)
                .map(|i| m.get(i, j))
                .filter(|v| v.is_finite())
                .collect();
            if obs.is_empty() {
                Err(Error::FeatureAllMissing(m.feature_ids()[j].clone()))
            } else {
                Ok(mean(&obs))
            }
        })
        .collect::<Result<_>>()?;
    for i in 0..n {
        if (0..p).all(|j| m.is_missing(i, j)) {
            return Err(Error::SampleAllMissing(m.sample_ids()[i].clone()));
        }
    }
    if !m.has_missing() {
        return Ok(m.clone());
    }

    let filled: Vec<(usize, Vec<f64>)> = (0..n)
        .into_par_iter()
        .filter(|&i| (0..p).any(|j| m.is_missing(i, j)))
        .map(|i| {
            let mut dists: Vec<(f64, usize)> = (0..n)
                .filter(|&o| o != i)
                .map(|o| (coobserved_distance(m, i, o).unwrap_or(f64::INFINITY), o))
                .collect();
            dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let neighbors: Vec<usize> = dists.iter().take(k).map(|&(_, o)| o).collect();
            let row = (0..p)
                .map(|j| {
                    if !m.is_missing(i, j) {
                        return m.get(i, j);
                    }
                    let obs: Vec<f64> = neighbors
                        .iter()
                        .map(|&o| m.get(o, j))
                        .filter(|v| v.is_finite())
                        .collect();
                    if obs.is_empty() {
                        global_means[j]
                    } else {
                        mean(&obs)
                    }
                })
                .collect();
            (i, row)
        })
        .collect();

    let mut values = m.values().to_vec();
    for (i, row) in filled {
        values[i * p..(i + 1) * p].copy_from_slice(&row);
    }
    Ok(m.with_values(values))
}

/// Shuffles samples with a seeded RNG and deals them into `n_clients`
/// disjoint groups whose sizes differ by at most one.
pub fn partition_clients(
    d: &MultiOmicsDataset,
    n_clients: usize,
    seed: u64,
) -> Result<Vec<MultiOmicsDataset>> {
    let n = d.n_samples();
    if n_clients == 0 {
        return Err(Error::InvalidConfig("n_clients must be positive".into()));
    }
    if n_clients > n {
        return Err(Error::TooFewSamples {
            needed: n_clients,
            have: n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let base = n / n_clients;
    let extra = n % n_clients;
    let mut start = 0;
    let mut out = Vec::with_capacity(n_clients);
    for c in 0..n_clients {
        let size = base + usize::from(c < extra);
        out.push(d.select_samples(&order[start..start + size]));
        start += size;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn matrix(rows: &[&[f64]]) -> OmicsMatrix {
        OmicsMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn parse_flags_na_cells() {
        let f = write_tmp("id,a,b\nx,1,NA\ny,2,3\nz,4,5\n");
        let m = parse_matrix(f.path(), ParseOptions::default()).unwrap();
        assert_eq!((m.n_samples(), m.n_features()), (3, 2));
        assert_eq!(m.n_missing(), 1);
        assert!(m.is_missing(0, 1));
    }

    #[test]
    fn parse_treats_garbage_as_missing() {
        let f = write_tmp("id,a,b\nx,1,,\n");
        assert!(matches!(
            parse_matrix(f.path(), ParseOptions::default()),
            Err(Error::RaggedRow { .. })
        ));
        let f = write_tmp("id,a,b\nx,1,abc\ny,NaN,2\n");
        let m = parse_matrix(f.path(), ParseOptions::default()).unwrap();
        assert_eq!(m.n_missing(), 2);
    }

    #[test]
    fn parse_rejects_duplicate_ids() {
        let f = write_tmp("id,a\nx,1\nx,2\n");
        assert!(matches!(
            parse_matrix(f.path(), ParseOptions::default()),
            Err(Error::DuplicateId { kind: "sample", .. })
        ));
    }

    #[test]
    fn parse_rejects_empty() {
        let f = write_tmp("id,a\n");
        assert!(matches!(
            parse_matrix(f.path(), ParseOptions::default()),
            Err(Error::Empty(_))
        ));
        let f = write_tmp("id\nx\n");
        assert!(matches!(
            parse_matrix(f.path(), ParseOptions::default()),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn parse_transposed_and_tab() {
        let f = write_tmp("feature\ts1\ts2\ts3\ng1\t1\t2\t3\ng2\t4\t5\t6\n");
        let m = parse_matrix(
            f.path(),
            ParseOptions {
                delimiter: b'\t',
                transpose: true,
            },
        )
        .unwrap();
        assert_eq!(m.sample_ids(), ["s1", "s2", "s3"]);
        assert_eq!(m.feature_ids(), ["g1", "g2"]);
        assert_eq!(m.row(1), [2.0, 5.0]);
    }

    #[test]
    fn survival_file() {
        let f = write_tmp("sample_id,time,event\na,10,1\nb,3.5,0\n");
        let recs = parse_survival(f.path(), b',').unwrap();
        assert_eq!(recs[1], SurvivalRecord::new("b", 3.5, false).unwrap());
        let f = write_tmp("sample_id,time,event\na,10,2\n");
        assert!(parse_survival(f.path(), b',').is_err());
        assert!(SurvivalRecord::new("a", -1.0, true).is_err());
    }

    #[test]
    fn feature_over_threshold_is_removed() {
        // feature 5 is 30% missing; no sample exceeds 1/6 missing
        let nan = f64::NAN;
        let mut rows: Vec<Vec<f64>> = (0..10)
            .map(|i| (0..6).map(|j| (i * (j + 1)) as f64).collect())
            .collect();
        for r in rows.iter_mut().take(3) {
            r[5] = nan;
        }
        let m = OmicsMatrix::from_rows(&rows).unwrap();
        let cfg = PreprocessConfig {
            max_missing_fraction: 0.2,
            impute_k: 2,
            top_variance_features: None,
            standardize: false,
        };
        let out = preprocess(&m, &cfg).unwrap();
        assert_eq!(out.n_features(), 5);
        assert_eq!(out.n_samples(), 10);
        assert!(!out.feature_ids().contains(&"f5".to_string()));
        assert!(!out.has_missing());
    }

    #[test]
    fn samples_are_dropped_before_features() {
        let nan = f64::NAN;
        // sample 0 misses 2 of 3 features; after dropping it feature 0 is
        // complete, so it must survive
        let m = matrix(&[
            &[nan, nan, 1.0],
            &[1.0, 2.0, 3.0],
            &[2.0, 3.0, 4.0],
            &[3.0, 4.0, 6.0],
            &[5.0, 1.0, 9.0],
        ]);
        let cfg = PreprocessConfig {
            max_missing_fraction: 0.2,
            impute_k: 2,
            top_variance_features: None,
            standardize: false,
        };
        let out = preprocess(&m, &cfg).unwrap();
        assert_eq!(out.n_samples(), 4);
        assert_eq!(out.n_features(), 3);
    }

    #[test]
    fn standardized_output_has_unit_sd() {
        let m = matrix(&[&[1.0, 10.0], &[2.0, 30.0], &[4.0, 20.0], &[8.0, 70.0]]);
        let out = preprocess(
            &m,
            &PreprocessConfig {
                impute_k: 2,
                ..Default::default()
            },
        )
        .unwrap();
        for j in 0..2 {
            let c = out.column(j);
            assert!(mean(&c).abs() < 1e-9);
            assert!((sample_variance(&c).sqrt() - 1.0).abs() < 1e-9);
        }
        let again = preprocess(
            &out,
            &PreprocessConfig {
                impute_k: 2,
                ..Default::default()
            },
        )
        .unwrap();
        for (a, b) in out.values().iter().zip(again.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn top_variance_keeps_highest() {
        let m = matrix(&[&[0.0, 0.0, 0.0], &[1.0, 10.0, 3.0], &[2.0, 20.0, 6.0]]);
        let cfg = PreprocessConfig {
            top_variance_features: Some(2),
            standardize: false,
            impute_k: 1,
            ..Default::default()
        };
        let out = preprocess(&m, &cfg).unwrap();
        assert_eq!(out.feature_ids(), ["f1", "f2"]);
    }

    #[test]
    fn preprocess_errors() {
        let nan = f64::NAN;
        let m = matrix(&[&[nan, 1.0], &[nan, 2.0]]);
        let cfg = PreprocessConfig {
            max_missing_fraction: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            preprocess(&m, &cfg),
            Err(Error::AllSamplesDropped)
        ));
        let m = matrix(&[&[nan, 1.0], &[2.0, 2.0], &[3.0, 1.0]]);
        let cfg = PreprocessConfig {
            max_missing_fraction: 0.5,
            impute_k: 3,
            ..Default::default()
        };
        assert!(matches!(preprocess(&m, &cfg), Err(Error::ImputeK { .. })));
    }

    #[test]
    fn impute_identity_without_missing() {
        let m = matrix(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        assert_eq!(knn_impute(&m, 2).unwrap(), m);
    }

    #[test]
    fn impute_mean_of_two_nearest() {
        // feature 1 = {1, 3, ?, 5}; feature 0 puts samples 1 and 3 nearest to 2
        let nan = f64::NAN;
        let m = matrix(&[&[0.0, 1.0], &[5.0, 3.0], &[6.0, nan], &[7.0, 5.0]]);
        let out = knn_impute(&m, 2).unwrap();
        assert_eq!(out.get(2, 1), 4.0);
        assert!(!out.has_missing());
    }

    #[test]
    fn impute_falls_back_to_global_mean() {
        let nan = f64::NAN;
        // both nearest neighbours of sample 0 also miss feature 1
        let m = matrix(&[
            &[0.0, nan],
            &[0.1, nan],
            &[0.2, nan],
            &[9.0, 2.0],
            &[9.5, 4.0],
        ]);
        let out = knn_impute(&m, 2).unwrap();
        assert_eq!(out.get(0, 1), 3.0);
    }

    #[test]
    fn impute_all_missing_feature() {
        let nan = f64::NAN;
        let m = matrix(&[&[1.0, nan], &[2.0, nan], &[3.0, nan]]);
        assert!(matches!(
            knn_impute(&m, 1),
            Err(Error::FeatureAllMissing(_))
        ));
    }

    #[test]
    fn partition_sizes_and_determinism() {
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64]).collect();
        let d = MultiOmicsDataset::single(OmicsMatrix::from_rows(&rows).unwrap());
        let parts = partition_clients(&d, 3, 7).unwrap();
        let sizes: Vec<usize> = parts.iter().map(|p| p.n_samples()).collect();
        assert_eq!(sizes, [34, 33, 33]);
        assert_eq!(parts, partition_clients(&d, 3, 7).unwrap());
        let mut all: Vec<String> = parts.iter().flat_map(|p| p.sample_ids().to_vec()).collect();
        all.sort();
        let mut expect = d.sample_ids().to_vec();
        expect.sort();
        assert_eq!(all, expect);

        let one = partition_clients(&d, 1, 7).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].n_samples(), 100);

        assert!(partition_clients(&d, 0, 7).is_err());
        assert!(partition_clients(&d, 101, 7).is_err());
    }

    #[test]
    fn partition_carries_survival() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let m = OmicsMatrix::from_rows(&rows).unwrap();
        let surv: Vec<SurvivalRecord> = m
            .sample_ids()
            .iter()
            .map(|s| SurvivalRecord::new(s.clone(), 1.0, true).unwrap())
            .collect();
        let d = MultiOmicsDataset::new(vec![m.clone(), m], Some(surv)).unwrap();
        for part in partition_clients(&d, 2, 1).unwrap() {
            let ids: Vec<&str> = part
                .survival()
                .unwrap()
                .iter()
                .map(|r| r.sample_id.as_str())
                .collect();
            let mut mine: Vec<&str> = part.sample_ids().iter().map(String::as_str).collect();
            mine.sort();
            let mut ids_sorted = ids.clone();
            ids_sorted.sort();
            assert_eq!(ids_sorted, mine);
            assert_eq!(part.layers()[0], part.layers()[1]);
        }
    }
}
