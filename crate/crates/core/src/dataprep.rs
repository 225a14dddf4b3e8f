//! CSV ingestion, count normalization, filtering, scaling and splits.
//!
//! Every fitted quantity (size-factor reference, kept genes, scaler) is
//! estimated on training-side rows only and then applied unchanged to the
//! remaining rows.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Matrix, Rng};
use crate::simgen::{ExpressionDataset, Stage};

pub const DEFAULT_LABEL_COLUMN: &str = "label";

// ---------------------------------------------------------------------------
// CSV

/// Reads a samples × genes CSV: first column sample id, a header of gene
/// names, labels in `label_column`. Values that are all nonnegative
/// integers load as raw counts; anything else loads as transformed.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<ExpressionDataset> {
    load_csv_inner(path.as_ref(), Some(label_column), None)
}

/// Like [`load_csv`], with labels read from a `sample_id,label` sidecar.
pub fn load_csv_with_labels(path: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<ExpressionDataset> {
    let table = read_label_sidecar(labels.as_ref())?;
    load_csv_inner(path.as_ref(), None, Some(table))
}

fn open_error(path: &str, e: csv::Error) -> Error {
    Error::Ingest {
        path: path.into(),
        row: 0,
        col: 0,
        msg: e.to_string(),
    }
}

fn read_label_sidecar(path: &Path) -> Result<BTreeMap<String, String>> {
    let display = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| open_error(&display, e))?;
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() < 2 {
            return Err(Error::Ingest {
                path: display,
                row: i + 2,
                col: rec.len() + 1,
                msg: "expected `sample_id,label`".into(),
            });
        }
        out.insert(rec[0].to_string(), rec[1].trim().to_string());
    }
    Ok(out)
}

fn load_csv_inner(
    path: &Path,
    label_column: Option<&str>,
    sidecar: Option<BTreeMap<String, String>>,
) -> Result<ExpressionDataset> {
    let display = path.display().to_string();
    let ingest = |row: usize, col: usize, msg: String| Error::Ingest {
        path: display.clone(),
        row,
        col,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| open_error(&display, e))?;
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.len() < 2 {
        return Err(ingest(1, header.len(), "need a sample id column and at least one gene".into()));
    }
    let label_idx = match label_column {
        Some(name) => Some(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| ingest(1, 0, format!("no label column named `{name}`")))?,
        ),
        None => None,
    };
    let gene_cols: Vec<usize> = (1..header.len()).filter(|&c| Some(c) != label_idx).collect();
    let gene_names: Vec<String> = gene_cols.iter().map(|&c| header[c].clone()).collect();

    let mut sample_ids = Vec::new();
    let mut raw_labels = Vec::new();
    let mut data = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(ingest(
                row,
                rec.len(),
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let id = rec[0].trim().to_string();
        let label = match (label_idx, &sidecar) {
            (Some(c), _) => rec[c].trim().to_string(),
            (None, Some(table)) => table
                .get(&id)
                .cloned()
                .ok_or_else(|| ingest(row, 1, format!("no label for sample `{id}`")))?,
            (None, None) => unreachable!("labels come from a column or a sidecar"),
        };
        if label.is_empty() {
            return Err(ingest(row, label_idx.map_or(1, |c| c + 1), "missing label".into()));
        }
        for &c in &gene_cols {
            let cell = rec[c].trim();
            let v: f64 = cell
                .parse()
                .map_err(|_| ingest(row, c + 1, format!("`{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(ingest(row, c + 1, format!("non-finite value `{cell}`")));
            }
            data.push(v);
        }
        sample_ids.push(id);
        raw_labels.push(label);
    }
    if sample_ids.is_empty() {
        return Err(ingest(2, 0, "no samples".into()));
    }

    let (labels, class_names) = encode_labels(&raw_labels);
    let values = Matrix::new(sample_ids.len(), gene_names.len(), data)?;
    let stage = if values.data().iter().all(|v| *v >= 0.0 && v.fract() == 0.0) {
        Stage::RawCounts
    } else {
        Stage::Transformed
    };
    let ds = ExpressionDataset {
        values,
        gene_names,
        sample_ids,
        labels,
        class_names,
        gt_deg: None,
        stage,
    };
    ds.validate()?;
    Ok(ds)
}

/// Integer labels map to themselves; anything else maps to sorted order.
fn encode_labels(raw: &[String]) -> (Vec<usize>, Vec<String>) {
    if let Ok(ints) = raw.iter().map(|s| s.parse::<usize>()).collect::<Result<Vec<_>, _>>() {
        let k = ints.iter().copied().max().unwrap_or(0) + 1;
        return (ints, (0..k).map(|c| c.to_string()).collect());
    }
    let mut names: Vec<String> = raw.to_vec();
    names.sort();
    names.dedup();
    let labels = raw
        .iter()
        .map(|s| names.binary_search(s).expect("label was collected"))
        .collect();
    (labels, names)
}

/// Writes the layout [`load_csv`] reads, with labels in a `label` column.
pub fn save_csv(ds: &ExpressionDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["sample_id".to_string()];
    header.extend(ds.gene_names.iter().cloned());
    header.push(DEFAULT_LABEL_COLUMN.to_string());
    w.write_record(&header)?;
    for j in 0..ds.n_samples() {
        let mut rec = Vec::with_capacity(ds.n_genes() + 2);
        rec.push(ds.sample_ids[j].clone());
        rec.extend(ds.values.row(j).iter().map(|v| v.to_string()));
        rec.push(ds.class_names[ds.labels[j]].clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Median-of-ratios normalization

/// Per-gene log geometric means used as the pseudo-reference sample.
/// `None` marks genes with a zero in some fitting row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeFactorReference {
    pub log_geo_means: Vec<Option<f64>>,
    /// Mean library size of the fitting rows, for the total-count fallback.
    pub mean_total: f64,
}

impl SizeFactorReference {
    pub fn fit(counts: &Matrix, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::contract("size-factor reference needs at least one row"));
        }
        if counts.data().iter().any(|v| *v < 0.0) {
            return Err(Error::domain("counts must be nonnegative"));
        }
        let n = rows.len() as f64;
        let log_geo_means = (0..counts.cols())
            .map(|g| {
                let mut s = 0.0;
                for &r in rows {
                    let v = counts.get(r, g);
                    if v <= 0.0 {
                        return None;
                    }
                    s += v.ln();
                }
                Some(s / n)
            })
            .collect();
        let mean_total = rows.iter().map(|&r| counts.row(r).iter().sum::<f64>()).sum::<f64>() / n;
        Ok(Self {
            log_geo_means,
            mean_total,
        })
    }

    pub fn n_reference_genes(&self) -> usize {
        self.log_geo_means.iter().filter(|g| g.is_some()).count()
    }

    /// Median over reference genes of `count / reference`, using the
    /// sample's positive counts only.
    pub fn size_factor(&self, row: &[f64]) -> f64 {
        let mut ratios: Vec<f64> = row
            .iter()
            .zip(&self.log_geo_means)
            .filter_map(|(&c, lg)| match lg {
                Some(lg) if c > 0.0 => Some(c / lg.exp()),
                _ => None,
            })
            .collect();
        if ratios.is_empty() {
            return self.total_ratio(row);
        }
        median(&mut ratios)
    }

    fn total_ratio(&self, row: &[f64]) -> f64 {
        let total: f64 = row.iter().sum();
        if total > 0.0 && self.mean_total > 0.0 {
            total / self.mean_total
        } else {
            1.0
        }
    }

    pub fn size_factors(&self, counts: &Matrix) -> Vec<f64> {
        if self.n_reference_genes() == 0 {
            warn!("no gene is positive in every fitting sample; using total-count size factors");
            return (0..counts.rows()).map(|r| self.total_ratio(counts.row(r))).collect();
        }
        (0..counts.rows()).map(|r| self.size_factor(counts.row(r))).collect()
    }

    /// Divides each sample by its size factor.
    pub fn normalize(&self, counts: &Matrix) -> (Matrix, Vec<f64>) {
        let sf = self.size_factors(counts);
        let mut out = counts.clone();
        for (r, s) in sf.iter().enumerate() {
            for v in out.row_mut(r) {
                *v /= s;
            }
        }
        (out, sf)
    }
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Median-of-ratios normalization with every row in the reference.
pub fn median_ratio_normalize(counts: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let rows: Vec<usize> = (0..counts.rows()).collect();
    Ok(SizeFactorReference::fit(counts, &rows)?.normalize(counts))
}

/// `log2(x + 1)`.
pub fn vst(normalized: &Matrix) -> Result<Matrix> {
    if let Some(v) = normalized.data().iter().find(|v| **v < 0.0) {
        return Err(Error::domain(format!("log transform of negative value {v}")));
    }
    Ok(normalized.map(|v| (v + 1.0).log2()))
}

// ---------------------------------------------------------------------------
// Near-zero variance filter

/// Keeps genes whose population variance over `rows` reaches `floor`.
pub fn nzv_filter(
    ds: &ExpressionDataset,
    rows: &[usize],
    floor: f64,
) -> Result<(ExpressionDataset, Vec<usize>)> {
    if ds.stage != Stage::Transformed {
        return Err(Error::contract("near-zero variance filtering expects transformed values"));
    }
    let kept = variance_kept(&ds.values, rows, floor);
    if kept.is_empty() {
        return Err(Error::config(format!("every gene has variance below {floor}")));
    }
    Ok((ds.subset_genes(&kept), kept))
}

fn variance_kept(values: &Matrix, rows: &[usize], floor: f64) -> Vec<usize> {
    let sub = values.select_rows(rows);
    let n = sub.rows().max(1) as f64;
    let means = sub.col_means();
    (0..sub.cols())
        .filter(|&g| {
            let m = means.get(0, g);
            let var = (0..sub.rows()).map(|r| (sub.get(r, g) - m).powi(2)).sum::<f64>() / n;
            var >= floor
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Standardization

/// Per-gene z-scoring with population statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(values: &Matrix, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::contract("standardizer needs at least one fitting row"));
        }
        let n = rows.len() as f64;
        let g = values.cols();
        let mut mean = vec![0.0; g];
        for &r in rows {
            for (m, v) in mean.iter_mut().zip(values.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; g];
        for &r in rows {
            for ((s, v), m) in var.iter_mut().zip(values.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Ok(Self { mean, std })
    }

    /// Constant genes map to zero.
    pub fn transform(&self, values: &Matrix) -> Result<Matrix> {
        if values.cols() != self.mean.len() {
            return Err(Error::Dimension {
                op: "standardize",
                lhs: values.shape(),
                rhs: (1, self.mean.len()),
            });
        }
        let mut out = values.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = if *s > 0.0 { (*v - m) / s } else { 0.0 };
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Preprocessing chain

/// Fitted normalize → log → filter chain, frozen for audit and replay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub normalize: bool,
    pub transform: bool,
    pub variance_floor: f64,
    pub reference: Option<SizeFactorReference>,
    pub size_factors: Vec<f64>,
    pub kept_genes: Vec<String>,
    pub n_input_genes: usize,
    pub gt_before_filter: Option<usize>,
    pub gt_after_filter: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    pub normalize: bool,
    pub transform: bool,
    pub variance_floor: f64,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            normalize: true,
            transform: true,
            variance_floor: 1e-8,
        }
    }
}

impl Preprocessor {
    /// Fits on `fit_rows` and returns the transformed, filtered dataset.
    /// Raw counts are normalized and logged only when the options ask for
    /// it; already-transformed data skips straight to filtering.
    pub fn fit_transform(
        ds: &ExpressionDataset,
        fit_rows: &[usize],
        opts: PreprocessOptions,
    ) -> Result<(Self, ExpressionDataset)> {
        let mut work = ds.clone();
        let raw = ds.stage == Stage::RawCounts;
        let mut reference = None;
        let mut size_factors = Vec::new();
        if raw && opts.normalize {
            let r = SizeFactorReference::fit(&work.values, fit_rows)?;
            let (norm, sf) = r.normalize(&work.values);
            work.values = norm;
            work.stage = Stage::Normalized;
            reference = Some(r);
            size_factors = sf;
        }
        if work.stage != Stage::Transformed && opts.transform {
            work.values = vst(&work.values)?;
        }
        work.stage = Stage::Transformed;
        let gt_before = work.n_gt_deg();
        let (filtered, kept) = nzv_filter(&work, fit_rows, opts.variance_floor)?;
        let pre = Self {
            normalize: raw && opts.normalize,
            transform: opts.transform,
            variance_floor: opts.variance_floor,
            reference,
            size_factors,
            kept_genes: kept.iter().map(|&g| ds.gene_names[g].clone()).collect(),
            n_input_genes: ds.n_genes(),
            gt_before_filter: gt_before,
            gt_after_filter: filtered.n_gt_deg(),
        };
        Ok((pre, filtered))
    }
}

// ---------------------------------------------------------------------------
// Splits

/// Outer test split plus an inner train/validation split of the rest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub test_fraction: f64,
    pub inner_val_fraction: f64,
    pub stratified: bool,
    pub seed: u64,
    #[serde(default)]
    pub trainval: Vec<usize>,
    #[serde(default)]
    pub test: Vec<usize>,
    #[serde(default)]
    pub train: Vec<usize>,
    #[serde(default)]
    pub val: Vec<usize>,
}

impl SplitPlan {
    pub fn new(seed: u64) -> Self {
        Self {
            test_fraction: 0.20,
            inner_val_fraction: 0.25,
            stratified: true,
            seed,
            trainval: Vec::new(),
            test: Vec::new(),
            train: Vec::new(),
            val: Vec::new(),
        }
    }

    pub fn is_materialized(&self) -> bool {
        !self.trainval.is_empty()
    }

    /// Draws a new inner split of the same outer partition.
    pub fn reshuffle_inner(&self, labels: &[usize], seed: u64) -> Result<SplitPlan> {
        let mut rng = Rng::new(seed).fork(2);
        let (train, val) = partition(&self.trainval, labels, self.inner_val_fraction, self.stratified, &mut rng);
        Ok(SplitPlan {
            seed,
            train,
            val,
            ..self.clone()
        })
    }
}

/// Materializes the 80/20 outer and 75/25 inner splits.
pub fn make_splits(labels: &[usize], plan: &SplitPlan) -> Result<SplitPlan> {
    let n = labels.len();
    if n < 4 {
        return Err(Error::config(format!("cannot split {n} samples three ways")));
    }
    for f in [plan.test_fraction, plan.inner_val_fraction] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::config(format!("split fractions must lie in (0, 1), got {f}")));
        }
    }
    let mut stratified = plan.stratified;
    if stratified {
        let mut counts = BTreeMap::new();
        for &l in labels {
            *counts.entry(l).or_insert(0usize) += 1;
        }
        if counts.values().any(|&c| c < 2) {
            warn!("a class has a single sample; falling back to unstratified splits");
            stratified = false;
        }
    }
    let all: Vec<usize> = (0..n).collect();
    let rng = Rng::new(plan.seed);
    let (trainval, test) = partition(&all, labels, plan.test_fraction, stratified, &mut rng.fork(1));
    let (train, val) = partition(&trainval, labels, plan.inner_val_fraction, stratified, &mut rng.fork(2));
    Ok(SplitPlan {
        stratified,
        trainval,
        test,
        train,
        val,
        ..plan.clone()
    })
}

/// Splits `pool` into (keep, held) with `round(fraction·|pool|)` held out.
/// Both halves come back sorted.
fn partition(
    pool: &[usize],
    labels: &[usize],
    fraction: f64,
    stratified: bool,
    rng: &mut Rng,
) -> (Vec<usize>, Vec<usize>) {
    let n = pool.len();
    let n_held = ((fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let mut keep = Vec::new();
    let mut held = Vec::new();
    if stratified {
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &i in pool {
            by_class.entry(labels[i]).or_default().push(i);
        }
        let sizes: Vec<usize> = by_class.values().map(Vec::len).collect();
        let quota = allocate(&sizes, n_held);
        for ((_, mut members), q) in by_class.into_iter().zip(quota) {
            rng.shuffle(&mut members);
            held.extend_from_slice(&members[..q]);
            keep.extend_from_slice(&members[q..]);
        }
    } else {
        let mut members = pool.to_vec();
        rng.shuffle(&mut members);
        held.extend_from_slice(&members[..n_held]);
        keep.extend_from_slice(&members[n_held..]);
    }
    keep.sort_unstable();
    held.sort_unstable();
    (keep, held)
}

/// Largest-remainder allocation of `total` over classes, then nudged so
/// every class with two or more members lands on both sides.
fn allocate(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    let exact: Vec<f64> = sizes.iter().map(|&s| s as f64 * total as f64 / n as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rem: Vec<(usize, f64)> = exact.iter().enumerate().map(|(i, e)| (i, e - e.floor())).collect();
    rem.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let short = total - quota.iter().sum::<usize>();
    for &(i, _) in rem.iter().take(short) {
        quota[i] += 1;
    }
    for i in 0..sizes.len() {
        if sizes[i] < 2 {
            continue;
        }
        if quota[i] == 0 {
            if let Some(j) = donor(&quota, sizes, i, |q, _| q > 1) {
                quota[j] -= 1;
                quota[i] += 1;
            }
        } else if quota[i] == sizes[i] {
            if let Some(j) = donor(&quota, sizes, i, |q, s| q + 1 < s) {
                quota[j] += 1;
                quota[i] -= 1;
            }
        }
    }
    quota
}

fn donor(quota: &[usize], sizes: &[usize], skip: usize, ok: impl Fn(usize, usize) -> bool) -> Option<usize> {
    (0..quota.len())
        .filter(|&j| j != skip && ok(quota[j], sizes[j]))
        .max_by_key(|&j| (sizes[j], std::cmp::Reverse(j)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;
    use proptest::prelude::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn loads_toy_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "toy.csv", "sample_id,g1,g2,label\na,1,2,0\nb,3,4,0\nc,5,6,1\n");
        let ds = load_csv(&p, "label").unwrap();
        assert_eq!(ds.values, Matrix::from_rows(&[vec![1., 2.], vec![3., 4.], vec![5., 6.]]).unwrap());
        assert_eq!(ds.labels, vec![0, 0, 1]);
        assert_eq!(ds.gene_names, vec!["g1", "g2"]);
        assert_eq!(ds.stage, Stage::RawCounts);
    }

    #[test]
    fn nan_cell_is_located() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "bad.csv", "sample_id,g1,g2,label\na,1,NaN,0\n");
        let err = load_csv(&p, "label").unwrap_err();
        match err {
            Error::Ingest { row, col, .. } => assert_eq!((row, col), (2, 3)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn ragged_and_unlabeled_rows_fail() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "ragged.csv", "sample_id,g1,g2,label\na,1,2,0\nb,3,1\n");
        assert!(matches!(load_csv(&p, "label"), Err(Error::Ingest { row: 3, .. })));
        let p = write(&dir, "nolabel.csv", "sample_id,g1,label\na,1,\n");
        assert!(matches!(load_csv(&p, "label"), Err(Error::Ingest { .. })));
        assert!(load_csv(&p, "class").is_err());
    }

    #[test]
    fn sidecar_labels_and_string_classes() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "x.csv", "sample_id,g1\na,1.5\nb,2.5\n");
        let l = write(&dir, "y.csv", "sample_id,label\nb,tumor\na,normal\n");
        let ds = load_csv_with_labels(&p, &l).unwrap();
        assert_eq!(ds.labels, vec![0, 1]);
        assert_eq!(ds.class_names, vec!["normal", "tumor"]);
        assert_eq!(ds.stage, Stage::Transformed);
    }

    #[test]
    fn save_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let ds = crate::simgen::generate(&crate::simgen::CohortSpec {
            n_genes: 30,
            ..crate::simgen::CohortSpec::new(1.0, 12, 0.2, 3)
        })
        .unwrap();
        let p = dir.path().join("rt.csv");
        save_csv(&ds, &p).unwrap();
        let back = load_csv(&p, "label").unwrap();
        assert_eq!(back.values, ds.values);
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.gene_names, ds.gene_names);
        assert_eq!(back.sample_ids, ds.sample_ids);
    }

    #[test]
    fn identical_samples_have_unit_size_factors() {
        let row = vec![3.0, 5.0, 0.0, 8.0];
        let m = Matrix::from_rows(&[row.clone(), row.clone(), row]).unwrap();
        let (out, sf) = median_ratio_normalize(&m).unwrap();
        assert!(sf.iter().all(|s| (s - 1.0).abs() < 1e-15));
        assert!(out.max_abs_diff(&m).unwrap() < 1e-12);
    }

    #[test]
    fn doubled_sample_has_double_size_factor() {
        let a = vec![3.0, 5.0, 9.0, 8.0];
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        let m = Matrix::from_rows(&[a, b]).unwrap();
        let (out, sf) = median_ratio_normalize(&m).unwrap();
        assert!((sf[1] / sf[0] - 2.0).abs() < 1e-14);
        assert!(out.select_rows(&[0]).max_abs_diff(&out.select_rows(&[1])).unwrap() < 1e-12);
    }

    #[test]
    fn falls_back_to_library_size() {
        let m = Matrix::from_rows(&[vec![0.0, 4.0], vec![2.0, 0.0], vec![6.0, 0.0]]).unwrap();
        let (_, sf) = median_ratio_normalize(&m).unwrap();
        // totals 4, 2, 6 over mean 4
        assert_eq!(sf, vec![1.0, 0.5, 1.5]);
    }

    #[test]
    fn frozen_reference_is_scale_equivariant() {
        let mut rng = Rng::new(4);
        let m = Matrix::from_fn(6, 9, |_, _| (rng.unit() * 50.0).floor() + 1.0);
        let reference = SizeFactorReference::fit(&m, &[0, 1, 2, 3, 4]).unwrap();
        let (base, sf) = reference.normalize(&m);
        for c in [0.5, 2.0, 8.0] {
            let mut scaled = m.clone();
            for v in scaled.row_mut(5) {
                *v *= c;
            }
            let (out, sf2) = reference.normalize(&scaled);
            assert_eq!(sf2[5], sf[5] * c);
            assert_eq!(out.row(5), base.row(5));
            assert_eq!(&sf2[..5], &sf[..5]);
        }
    }

    #[test]
    fn log_transform_values() {
        let m = Matrix::row_vector(vec![0.0, 1.0, 3.0]);
        assert_eq!(vst(&m).unwrap().data(), &[0.0, 1.0, 2.0]);
        assert!(vst(&Matrix::row_vector(vec![-1.0])).is_err());
    }

    #[test]
    fn constant_genes_are_filtered() {
        let values = Matrix::from_rows(&[vec![1.0, 2.0, 5.0], vec![1.0, 3.0, 5.0], vec![1.0, 4.0, 6.0]]).unwrap();
        let mut ds = ExpressionDataset::new(
            values,
            vec!["a".into(), "b".into(), "c".into()],
            vec!["s1".into(), "s2".into(), "s3".into()],
            vec![0, 1, 0],
            Stage::Transformed,
        )
        .unwrap();
        ds.gt_deg = Some(vec![true, false, true]);
        let (out, kept) = nzv_filter(&ds, &[0, 1, 2], 1e-8).unwrap();
        assert_eq!(kept, vec![1, 2]);
        assert_eq!(out.gene_names, vec!["b", "c"]);
        assert_eq!(out.gt_deg, Some(vec![false, true]));
        // Only the fitting rows count: over rows 0 and 1, gene c is constant.
        let (_, kept) = nzv_filter(&ds, &[0, 1], 1e-8).unwrap();
        assert_eq!(kept, vec![1]);
        let flat = ds.subset_genes(&[0]);
        assert!(matches!(nzv_filter(&flat, &[0, 1, 2], 1e-8), Err(Error::Config(_))));
    }

    #[test]
    fn standardizer_moments_on_fit_rows() {
        let mut rng = Rng::new(21);
        let m = Matrix::from_fn(30, 7, |_, j| rng.standard_normal() * (j as f64 + 1.0) + 3.0);
        let rows: Vec<usize> = (0..20).collect();
        let s = Standardizer::fit(&m, &rows).unwrap();
        let z = s.transform(&m).unwrap().select_rows(&rows);
        let mean = z.col_means();
        for g in 0..7 {
            let var = (0..20).map(|r| z.get(r, g).powi(2)).sum::<f64>() / 20.0;
            assert!(mean.get(0, g).abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn hundred_samples_split_sizes() {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let s = make_splits(&labels, &SplitPlan::new(3)).unwrap();
        assert_eq!((s.trainval.len(), s.test.len()), (80, 20));
        assert_eq!((s.train.len(), s.val.len()), (60, 20));
        assert_eq!(s, make_splits(&labels, &SplitPlan::new(3)).unwrap());
        assert_ne!(s.test, make_splits(&labels, &SplitPlan::new(4)).unwrap().test);
    }

    #[test]
    fn singleton_class_falls_back() {
        let mut labels = vec![0; 9];
        labels.push(1);
        let s = make_splits(&labels, &SplitPlan::new(0)).unwrap();
        assert!(!s.stratified);
    }

    proptest! {
        #[test]
        fn splits_are_disjoint_and_exhaustive(n in 6usize..120, k in 2usize..4, seed in 0u64..1000) {
            let labels: Vec<usize> = (0..n).map(|i| (i * 7 + i / 3) % k).collect();
            let s = make_splits(&labels, &SplitPlan::new(seed)).unwrap();
            let mut all: Vec<usize> = s.trainval.iter().chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let mut inner: Vec<usize> = s.train.iter().chain(&s.val).copied().collect();
            inner.sort_unstable();
            prop_assert_eq!(&inner, &s.trainval);
            if s.stratified {
                for c in 0..k {
                    let count = labels.iter().filter(|&&l| l == c).count();
                    if count >= 4 {
                        // a part smaller than the class count cannot hold every class
                        for part in [&s.train, &s.val, &s.test] {
                            if part.len() >= k {
                                prop_assert!(part.iter().any(|&i| labels[i] == c));
                            }
                        }
                    }
                }
            }
        }
    }
}
