//! Classification metrics, DEG recovery and result emission.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bumped whenever a serialized field changes meaning or name.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    /// Unweighted mean of the per-class F1 scores.
    pub macro_f1: f64,
    /// F1 of class 1, the positive class in two-class problems.
    pub positive_f1: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub support: Vec<usize>,
    pub n_selected_genes: Option<usize>,
    pub n_true_degs: Option<usize>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Standard multi-class metrics over `n_classes` classes; 0/0 counts as 0.
pub fn compute_metrics(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<MetricBundle> {
    if predictions.is_empty() {
        return Err(Error::contract("metrics need at least one prediction"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if let Some(bad) = predictions.iter().chain(labels).find(|&&c| c >= n_classes) {
        return Err(Error::contract(format!("class {bad} out of range for {n_classes} classes")));
    }
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        confusion[y][p] += 1;
    }
    let support: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
    let correct: usize = (0..n_classes).map(|k| confusion[k][k]).sum();
    let mut precision = Vec::with_capacity(n_classes);
    let mut recall = Vec::with_capacity(n_classes);
    let mut f1 = Vec::with_capacity(n_classes);
    for k in 0..n_classes {
        let tp = confusion[k][k];
        let predicted: usize = confusion.iter().map(|r| r[k]).sum();
        precision.push(ratio(tp, predicted));
        recall.push(ratio(tp, support[k]));
        // 2TP / (2TP + FP + FN) is the harmonic mean without the 0/0 trap
        f1.push(ratio(2 * tp, predicted + support[k]));
    }
    let macro_f1 = f1.iter().sum::<f64>() / n_classes as f64;
    Ok(MetricBundle {
        accuracy: ratio(correct, labels.len()),
        positive_f1: f1.get(1).copied().unwrap_or(0.0),
        precision,
        recall,
        f1,
        macro_f1,
        confusion,
        support,
        n_selected_genes: None,
        n_true_degs: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegRecovery {
    pub n_selected: usize,
    pub n_true: usize,
    pub precision: f64,
    pub recall: f64,
}

/// Overlap between a selected gene list and the ground-truth DE genes.
pub fn deg_recovery(selected: &[String], gt_deg: Option<&[String]>) -> Result<DegRecovery> {
    let gt = gt_deg.ok_or_else(|| Error::Data("dataset carries no ground-truth DE genes".into()))?;
    let gt: HashSet<&str> = gt.iter().map(String::as_str).collect();
    let sel: HashSet<&str> = selected.iter().map(String::as_str).collect();
    let n_true = sel.intersection(&gt).count();
    Ok(DegRecovery {
        n_selected: sel.len(),
        n_true,
        precision: ratio(n_true, sel.len()),
        recall: ratio(n_true, gt.len()),
    })
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, n })
    }

    /// `0.900 ± 0.042`
    pub fn format(&self, decimals: usize) -> String {
        format!("{:.*} ± {:.*}", decimals, self.mean, decimals, self.std)
    }
}

/// One line of a benchmark table: a dataset, a method and a classifier,
/// summarized over repeats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub method: String,
    pub classifier: String,
    pub accuracy: Option<Summary>,
    pub macro_f1: Option<Summary>,
    pub positive_f1: Option<Summary>,
    pub n_selected: Option<Summary>,
    pub n_true_degs: Option<Summary>,
    /// Test accuracy of the ground-truth DE subset, synthetic data only.
    pub true_accuracy: Option<Summary>,
    pub runs: usize,
    pub failed_runs: usize,
}

impl ResultRow {
    pub fn status(&self) -> &'static str {
        if self.failed_runs == 0 {
            "ok"
        } else if self.failed_runs < self.runs {
            "partial"
        } else {
            "failed"
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub schema_version: u32,
    #[serde(flatten)]
    pub body: T,
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let v = Versioned {
        schema_version: SCHEMA_VERSION,
        body: value,
    };
    let mut text = serde_json::to_string_pretty(&v)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let v: Versioned<T> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if v.schema_version != SCHEMA_VERSION {
        return Err(Error::Data(format!("unsupported schema version {}", v.schema_version)));
    }
    Ok(v.body)
}

pub const SUMMARY_COLUMNS: [&str; 18] = [
    "dataset",
    "method",
    "classifier",
    "runs",
    "failed_runs",
    "status",
    "accuracy_mean",
    "accuracy_std",
    "macro_f1_mean",
    "macro_f1_std",
    "positive_f1_mean",
    "positive_f1_std",
    "n_selected_mean",
    "n_selected_std",
    "n_true_degs_mean",
    "n_true_degs_std",
    "true_accuracy_mean",
    "true_accuracy_std",
];

/// One CSV row per result row; missing values are left empty.
pub fn write_summary_csv(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_COLUMNS)?;
    let pair = |s: &Option<Summary>| match s {
        Some(s) => [s.mean.to_string(), s.std.to_string()],
        None => [String::new(), String::new()],
    };
    for r in rows {
        let mut rec = vec![
            r.dataset.clone(),
            r.method.clone(),
            r.classifier.clone(),
            r.runs.to_string(),
            r.failed_runs.to_string(),
            r.status().to_string(),
        ];
        for s in [&r.accuracy, &r.macro_f1, &r.positive_f1, &r.n_selected, &r.n_true_degs, &r.true_accuracy] {
            rec.extend(pair(s));
        }
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text table with `mean ± std` cells.
pub fn text_table(rows: &[ResultRow]) -> String {
    let header = ["Dataset", "Method", "Classifier", "Acc.", "Macro-F1", "# Sel. Genes", "# True DEGs", "True Acc.", "Status"];
    let cell = |s: &Option<Summary>, d: usize| s.map(|s| s.format(d)).unwrap_or_else(|| "-".into());
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.dataset.clone(),
                r.method.clone(),
                r.classifier.clone(),
                cell(&r.accuracy, 3),
                cell(&r.macro_f1, 3),
                cell(&r.n_selected, 1),
                cell(&r.n_true_degs, 1),
                cell(&r.true_accuracy, 3),
                r.status().into(),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| body.iter().map(|r| r[c].chars().count()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let line = |out: &mut String, cells: Vec<String>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", padded.join(" | ").trim_end());
    };
    line(&mut out, header.iter().map(|s| s.to_string()).collect());
    let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
    for r in body {
        line(&mut out, r);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;
    use proptest::prelude::*;

    /// Metrics from explicit TP/FP/FN counting, one class at a time.
    fn brute(pred: &[usize], y: &[usize], k: usize) -> (f64, Vec<f64>, f64) {
        let mut f1 = Vec::new();
        for c in 0..k {
            let mut tp = 0.0;
            let mut fp = 0.0;
            let mut fneg = 0.0;
            for i in 0..y.len() {
                match (pred[i] == c, y[i] == c) {
                    (true, true) => tp += 1.0,
                    (true, false) => fp += 1.0,
                    (false, true) => fneg += 1.0,
                    _ => {}
                }
            }
            let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let r = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
            f1.push(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 });
        }
        let acc = pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64;
        let m = f1.iter().sum::<f64>() / k as f64;
        (acc, f1, m)
    }

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 1, 0];
        let m = compute_metrics(&y, &y, 3).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
        assert!(compute_metrics(&[], &[], 2).is_err());
        assert!(compute_metrics(&[0], &[0, 1], 2).is_err());
    }

    #[test]
    fn binary_hand_case() {
        // TP=1 FP=1 FN=1 TN=1
        let m = compute_metrics(&[1, 1, 0, 0], &[1, 0, 1, 0], 2).unwrap();
        assert_eq!(m.positive_f1, 0.5);
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.confusion, vec![vec![1, 1], vec![1, 1]]);
    }

    #[test]
    fn matches_brute_force_on_random_pairs() {
        let mut rng = Rng::new(77);
        for trial in 0..1000 {
            let k = [2, 3, 5][trial % 3];
            let n = 1 + (rng.next_u64() % 40) as usize;
            let y: Vec<usize> = (0..n).map(|_| (rng.next_u64() % k as u64) as usize).collect();
            let p: Vec<usize> = (0..n).map(|_| (rng.next_u64() % k as u64) as usize).collect();
            let m = compute_metrics(&p, &y, k).unwrap();
            let (acc, f1, mf1) = brute(&p, &y, k);
            assert!((m.accuracy - acc).abs() < 1e-12);
            assert!((m.macro_f1 - mf1).abs() < 1e-12);
            for c in 0..k {
                assert!((m.f1[c] - f1[c]).abs() < 1e-12);
            }
            let rows: Vec<usize> = m.confusion.iter().map(|r| r.iter().sum()).collect();
            assert_eq!(rows, (0..k).map(|c| y.iter().filter(|&&v| v == c).count()).collect::<Vec<_>>());
        }
    }

    proptest! {
        #[test]
        fn macro_f1_ignores_relabeling(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..60),
            shift in 0usize..4,
        ) {
            let (p, y): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let relabel = |v: &[usize]| v.iter().map(|c| (c + shift) % 4).collect::<Vec<_>>();
            let a = compute_metrics(&p, &y, 4).unwrap();
            let b = compute_metrics(&relabel(&p), &relabel(&y), 4).unwrap();
            prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
            prop_assert!((a.accuracy - b.accuracy).abs() < 1e-12);
        }
    }

    #[test]
    fn deg_recovery_cases() {
        let names = |r: std::ops::Range<usize>| r.map(|i| format!("g{i}")).collect::<Vec<_>>();
        let gt = names(0..52);
        let same = deg_recovery(&gt, Some(&gt)).unwrap();
        assert_eq!((same.precision, same.recall), (1.0, 1.0));
        let none = deg_recovery(&names(100..110), Some(&gt)).unwrap();
        assert_eq!((none.precision, none.recall), (0.0, 0.0));
        let mut sel = names(0..46);
        sel.extend(names(200..206));
        let t2 = deg_recovery(&sel, Some(&gt)).unwrap();
        assert_eq!(t2.n_selected, 52);
        assert_eq!(t2.n_true, 46);
        assert!((t2.precision - 46.0 / 52.0).abs() < 1e-15);
        assert!(deg_recovery(&sel, None).is_err());
    }

    #[test]
    fn summary_formatting() {
        let s = Summary::of(&[0.9, 0.95, 0.85]).unwrap();
        assert!((s.std - 0.05).abs() < 1e-12);
        assert_eq!(s.format(3), "0.900 ± 0.050");
        assert_eq!(Summary::of(&[0.7]).unwrap().std, 0.0);
        assert!(Summary::of(&[]).is_none());
    }

    #[test]
    fn spearman_extremes() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&a, &[10.0, 20.0, 30.0, 40.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&a, &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(average_ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }

    fn row(name: &str, failed: usize) -> ResultRow {
        let s = Summary::of(&[0.9, 0.95]);
        ResultRow {
            dataset: name.into(),
            method: "rge".into(),
            classifier: "gcn".into(),
            accuracy: s,
            macro_f1: s,
            positive_f1: s,
            n_selected: Summary::of(&[52.0, 52.0]),
            n_true_degs: None,
            true_accuracy: None,
            runs: 2,
            failed_runs: failed,
        }
    }

    #[test]
    fn emission_formats() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![row("(1, 50, 0.05)", 0), row("(1, 200, 0.30)", 1)];
        let jp = dir.path().join("r.json");
        #[derive(Serialize, Deserialize, PartialEq, Debug)]
        struct Wrap {
            rows: Vec<ResultRow>,
        }
        let w = Wrap { rows: rows.clone() };
        write_json(&w, &jp).unwrap();
        assert_eq!(read_json::<Wrap>(&jp).unwrap(), w);

        let cp = dir.path().join("s.csv");
        write_summary_csv(&rows, &cp).unwrap();
        let mut rdr = csv::Reader::from_path(&cp).unwrap();
        assert_eq!(rdr.headers().unwrap().len(), SUMMARY_COLUMNS.len());
        let recs: Vec<_> = rdr.records().map(|r| r.unwrap()).collect();
        assert_eq!(recs.len(), 2);
        assert_eq!(&recs[1][5], "partial");

        let t = text_table(&rows);
        assert!(t.contains("0.925 ± 0.035"));
        assert_eq!(t.lines().count(), 4);
    }
}
