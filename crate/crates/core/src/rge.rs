//! Recursive gene elimination.
//!
//! Each iteration standardizes the current gene subset on the training
//! rows, links train and validation samples into a correlation graph,
//! trains a fresh classifier, records validation metrics, scores genes by
//! integrated gradients over the training nodes and drops the weakest
//! fraction. The subset with the best validation accuracy is retrained on
//! train+validation and scored once on the held-out test samples.

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::attribution::{aggregate_importance, IgConfig};
use crate::dataprep::{make_splits, PreprocessOptions, Preprocessor, SplitPlan, Standardizer};
use crate::error::{Error, Result};
use crate::graph::{Masks, SampleGraph, DEFAULT_TAU};
use crate::model::{predict, train, GcnModel, ModelConfig, TrainConfig};
use crate::numcore::{derive_seed, Matrix};
use crate::report::{compute_metrics, deg_recovery, DegRecovery, MetricBundle, Summary};
use crate::simgen::{ExpressionDataset, Stage};

const MODEL_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;
const FINAL_TAG: u64 = 0xF1A1;
/// Slack for `rate · count` landing a rounding error away from an integer.
const COUNT_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classifier {
    #[default]
    Gcn,
    /// Same network with the identity operator.
    Mlp,
}

impl std::str::FromStr for Classifier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(Classifier::Gcn),
            "mlp" => Ok(Classifier::Mlp),
            _ => Err(Error::config(format!("unknown classifier '{s}' (expected gcn or mlp)"))),
        }
    }
}

impl std::fmt::Display for Classifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Classifier::Gcn => "gcn",
            Classifier::Mlp => "mlp",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RgeConfig {
    pub elimination_rate: f64,
    pub min_gene_fraction: f64,
    pub seed: u64,
    pub repeats: usize,
    pub tau: f64,
    pub classifier: Classifier,
    #[serde(default)]
    pub model: ModelConfig,
}

impl Default for RgeConfig {
    fn default() -> Self {
        Self {
            elimination_rate: 0.10,
            min_gene_fraction: 0.05,
            seed: 0,
            repeats: 5,
            tau: DEFAULT_TAU,
            classifier: Classifier::Gcn,
            model: ModelConfig::default(),
        }
    }
}

impl RgeConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.elimination_rate > 0.0 && self.elimination_rate < 1.0) {
            return Err(Error::config(format!(
                "elimination rate must lie in (0, 1), got {}",
                self.elimination_rate
            )));
        }
        if !(self.min_gene_fraction > 0.0 && self.min_gene_fraction < 1.0) {
            return Err(Error::config(format!(
                "minimum gene fraction must lie in (0, 1), got {}",
                self.min_gene_fraction
            )));
        }
        if self.repeats == 0 {
            return Err(Error::config("repeats must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        self.model.validate()
    }
}

/// `⌈fraction · total⌉`, the smallest subset the loop may produce.
pub fn min_gene_count(total: usize, fraction: f64) -> usize {
    ((fraction * total as f64 - COUNT_SLACK).ceil().max(1.0)) as usize
}

/// Genes dropped from a subset of `count`: `max(1, ⌊rate · count⌋)`.
pub fn removal_count(count: usize, rate: f64) -> usize {
    ((rate * count as f64 + COUNT_SLACK).floor() as usize).max(1)
}

/// Gene counts the loop visits when nothing fails.
pub fn gene_count_schedule(total: usize, rate: f64, min_fraction: f64) -> Vec<usize> {
    let floor = min_gene_count(total, min_fraction);
    let mut out = vec![total];
    let mut g = total;
    while g > removal_count(g, rate) && g - removal_count(g, rate) >= floor {
        g -= removal_count(g, rate);
        out.push(g);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Column indices into the dataset the loop ran on.
    pub gene_indices: Vec<usize>,
    pub genes: Vec<String>,
    pub val_accuracy: f64,
    pub val_macro_f1: f64,
    /// Importance per gene, aligned with `gene_indices`.
    pub scores: Vec<f64>,
    pub n_edges: usize,
    pub final_loss: Option<f64>,
    pub failed: bool,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RgeTrace {
    pub rge: RgeConfig,
    pub train: TrainConfig,
    pub ig: IgConfig,
    pub split_seed: u64,
    pub n_initial_genes: usize,
    pub min_genes: usize,
    pub iterations: Vec<IterationRecord>,
    pub complete: bool,
    pub best_iteration: Option<usize>,
    pub selected_genes: Vec<String>,
    pub selected_indices: Vec<usize>,
    pub final_test_metrics: Option<MetricBundle>,
    pub deg_recovery: Option<DegRecovery>,
}

impl RgeTrace {
    pub fn gene_counts(&self) -> Vec<usize> {
        self.iterations.iter().map(|r| r.gene_indices.len()).collect()
    }
}

/// Highest validation accuracy among successful iterations; ties go to the
/// smaller subset.
pub fn best_iteration(records: &[IterationRecord]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in records.iter().enumerate() {
        if r.failed {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let rb = &records[b];
                let better = r.val_accuracy > rb.val_accuracy
                    || (r.val_accuracy == rb.val_accuracy && r.gene_indices.len() < rb.gene_indices.len());
                Some(if better { i } else { b })
            }
        };
    }
    best
}

/// Positions (into `scores`) of the `k` weakest genes, lowest score first
/// and lower gene index first among equal scores.
pub fn weakest(scores: &[f64], genes: &[usize], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(genes[a].cmp(&genes[b])));
    order.truncate(k);
    order
}

fn check_inputs(ds: &ExpressionDataset, splits: &SplitPlan) -> Result<()> {
    ds.validate()?;
    if ds.stage != Stage::Transformed {
        return Err(Error::contract("gene elimination expects a preprocessed dataset"));
    }
    if !splits.is_materialized() || splits.train.is_empty() || splits.val.is_empty() {
        return Err(Error::contract("gene elimination needs materialized train/validation splits"));
    }
    if let Some(&bad) = splits.trainval.iter().chain(&splits.test).find(|&&i| i >= ds.n_samples()) {
        return Err(Error::contract(format!("split index {bad} out of range")));
    }
    Ok(())
}

/// Standardized features for `fit` ∪ `eval` rows (in that order) and the
/// matching graph with `fit` as the training mask and `eval` as `held`.
fn build_problem(
    ds: &ExpressionDataset,
    genes: &[usize],
    fit: &[usize],
    eval: &[usize],
    eval_is_test: bool,
    rge: &RgeConfig,
) -> Result<(Matrix, SampleGraph, Vec<usize>)> {
    let sub = ds.values.select_cols(genes);
    let st = Standardizer::fit(&sub, fit)?;
    if st.std.iter().all(|&s| s == 0.0) {
        return Err(Error::Data("every gene in the subset is constant on the training rows".into()));
    }
    let nodes: Vec<usize> = fit.iter().chain(eval).copied().collect();
    let x = st.transform(&sub.select_rows(&nodes))?;
    let n = nodes.len();
    let fit_pos: Vec<usize> = (0..fit.len()).collect();
    let eval_pos: Vec<usize> = (fit.len()..n).collect();
    let masks = if eval_is_test {
        Masks::new(n, &fit_pos, &[], &eval_pos)?
    } else {
        Masks::new(n, &fit_pos, &eval_pos, &[])?
    };
    let graph = match rge.classifier {
        Classifier::Gcn => SampleGraph::build(&x, rge.tau)?,
        Classifier::Mlp => SampleGraph::isolated(n),
    }
    .with_masks(masks)?;
    let labels = nodes.iter().map(|&i| ds.labels[i]).collect();
    Ok((x, graph, labels))
}

/// Trains on `fit` rows and scores `eval` rows; returns the model too.
#[allow(clippy::too_many_arguments)]
fn fit_and_score(
    ds: &ExpressionDataset,
    genes: &[usize],
    fit: &[usize],
    eval: &[usize],
    eval_is_test: bool,
    rge: &RgeConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<Fitted> {
    let (x, graph, labels) = build_problem(ds, genes, fit, eval, eval_is_test, rge)?;
    let k = ds.n_classes();
    let mut model = GcnModel::new(genes.len(), k, rge.model.clone(), derive_seed(seed, MODEL_STREAM))?;
    let cfg = TrainConfig {
        seed: derive_seed(seed, TRAIN_STREAM),
        ..train_cfg.clone()
    };
    let report = train(&mut model, &graph, &x, &labels, &cfg)?;
    let pred = predict(&model, &graph, &x)?;
    let held: Vec<usize> = (fit.len()..labels.len()).collect();
    let metrics = compute_metrics(
        &held.iter().map(|&i| pred.classes[i]).collect::<Vec<_>>(),
        &held.iter().map(|&i| labels[i]).collect::<Vec<_>>(),
        k,
    )?;
    Ok(Fitted {
        model,
        graph,
        x,
        metrics,
        final_loss: report.losses.last().copied(),
    })
}

/// A trained classifier together with the graph and features it saw.
#[derive(Clone, Debug)]
pub struct Fitted {
    pub model: GcnModel,
    pub graph: SampleGraph,
    /// Standardized features, training rows first.
    pub x: Matrix,
    /// Metrics on the held rows.
    pub metrics: MetricBundle,
    pub final_loss: Option<f64>,
}

fn run_iteration(
    ds: &ExpressionDataset,
    splits: &SplitPlan,
    genes: &[usize],
    it: usize,
    trace: &RgeTrace,
) -> Result<IterationRecord> {
    let seed = derive_seed(trace.rge.seed, it as u64);
    let f = fit_and_score(ds, genes, &splits.train, &splits.val, false, &trace.rge, &trace.train, seed)?;
    let scores = aggregate_importance(&f.model, &f.graph, &f.x, &trace.ig)?;
    Ok(IterationRecord {
        iteration: it,
        gene_indices: genes.to_vec(),
        genes: genes.iter().map(|&g| ds.gene_names[g].clone()).collect(),
        val_accuracy: f.metrics.accuracy,
        val_macro_f1: f.metrics.macro_f1,
        scores: scores.scores,
        n_edges: f.graph.edges.len(),
        final_loss: f.final_loss,
        failed: false,
        failure: None,
    })
}

/// Next subset after `last`, or `None` when the floor stops the loop.
fn next_genes(last: &IterationRecord, previous: Option<&IterationRecord>, rate: f64, floor: usize) -> Option<Vec<usize>> {
    let genes = &last.gene_indices;
    let k = removal_count(genes.len(), rate);
    if genes.len() <= k || genes.len() - k < floor {
        return None;
    }
    let scores: Vec<f64> = if !last.failed {
        last.scores.clone()
    } else {
        // fall back to the last successful ranking, restricted to the survivors
        let prev = previous.filter(|p| !p.failed);
        genes
            .iter()
            .map(|g| {
                prev.and_then(|p| p.gene_indices.iter().position(|x| x == g).map(|i| p.scores[i]))
                    .unwrap_or(0.0)
            })
            .collect()
    };
    let drop = weakest(&scores, genes, k);
    let mut keep = vec![true; genes.len()];
    drop.into_iter().for_each(|i| keep[i] = false);
    Some(genes.iter().zip(keep).filter(|(_, k)| *k).map(|(g, _)| *g).collect())
}

fn new_trace(ds: &ExpressionDataset, splits: &SplitPlan, rge: &RgeConfig, train: &TrainConfig, ig: &IgConfig) -> RgeTrace {
    RgeTrace {
        rge: rge.clone(),
        train: train.clone(),
        ig: ig.clone(),
        split_seed: splits.seed,
        n_initial_genes: ds.n_genes(),
        min_genes: min_gene_count(ds.n_genes(), rge.min_gene_fraction),
        iterations: Vec::new(),
        complete: false,
        best_iteration: None,
        selected_genes: Vec::new(),
        selected_indices: Vec::new(),
        final_test_metrics: None,
        deg_recovery: None,
    }
}

fn drive(
    ds: &ExpressionDataset,
    splits: &SplitPlan,
    mut trace: RgeTrace,
    limit: Option<usize>,
    observer: &mut dyn FnMut(&RgeTrace) -> Result<()>,
) -> Result<RgeTrace> {
    check_inputs(ds, splits)?;
    trace.rge.validate()?;
    trace.train.validate()?;
    trace.ig.validate()?;
    if trace.n_initial_genes != ds.n_genes() {
        return Err(Error::config("trace was recorded on a dataset with a different gene count"));
    }
    let rate = trace.rge.elimination_rate;
    let floor = trace.min_genes;
    let mut genes: Option<Vec<usize>> = match trace.iterations.len() {
        0 => Some((0..ds.n_genes()).collect()),
        n => next_genes(&trace.iterations[n - 1], n.checked_sub(2).map(|i| &trace.iterations[i]), rate, floor),
    };
    while let Some(current) = genes {
        if limit.is_some_and(|l| trace.iterations.len() >= l) {
            return Ok(trace);
        }
        let it = trace.iterations.len();
        let record = match run_iteration(ds, splits, &current, it, &trace) {
            Ok(r) => r,
            Err(Error::Numeric(msg)) => {
                warn!("iteration {it} failed: {msg}");
                IterationRecord {
                    iteration: it,
                    genes: current.iter().map(|&g| ds.gene_names[g].clone()).collect(),
                    gene_indices: current,
                    val_accuracy: 0.0,
                    val_macro_f1: 0.0,
                    scores: Vec::new(),
                    n_edges: 0,
                    final_loss: None,
                    failed: true,
                    failure: Some(msg),
                }
            }
            Err(e) => return Err(e),
        };
        info!(
            "iteration {it}: {} genes, validation accuracy {:.3}",
            record.gene_indices.len(),
            record.val_accuracy
        );
        trace.iterations.push(record);
        observer(&trace)?;
        let n = trace.iterations.len();
        genes = next_genes(&trace.iterations[n - 1], n.checked_sub(2).map(|i| &trace.iterations[i]), rate, floor);
    }
    let best = best_iteration(&trace.iterations)
        .ok_or_else(|| Error::Numeric("every elimination iteration failed".into()))?;
    let chosen = trace.iterations[best].gene_indices.clone();
    let mut metrics = evaluate_with(ds, &chosen, splits, &trace.rge, &trace.train, derive_seed(trace.rge.seed, FINAL_TAG))?;
    let names: Vec<String> = chosen.iter().map(|&g| ds.gene_names[g].clone()).collect();
    metrics.n_selected_genes = Some(chosen.len());
    if let Some(gt) = gt_names(ds) {
        let rec = deg_recovery(&names, Some(&gt))?;
        metrics.n_true_degs = Some(rec.n_true);
        trace.deg_recovery = Some(rec);
    }
    trace.best_iteration = Some(best);
    trace.selected_genes = names;
    trace.selected_indices = chosen;
    trace.final_test_metrics = Some(metrics);
    trace.complete = true;
    observer(&trace)?;
    Ok(trace)
}

fn gt_names(ds: &ExpressionDataset) -> Option<Vec<String>> {
    ds.gt_deg.as_ref().map(|gt| {
        gt.iter()
            .zip(&ds.gene_names)
            .filter(|(d, _)| **d)
            .map(|(_, n)| n.clone())
            .collect()
    })
}

/// Runs the whole loop and the final held-out evaluation.
pub fn run_rge(
    dataset: &ExpressionDataset,
    splits: &SplitPlan,
    rge: &RgeConfig,
    train: &TrainConfig,
    ig: &IgConfig,
) -> Result<RgeTrace> {
    drive(dataset, splits, new_trace(dataset, splits, rge, train, ig), None, &mut |_| Ok(()))
}

/// Stops after `max_iterations` iterations, leaving an incomplete trace
/// that [`resume_rge`] can finish.
pub fn run_rge_partial(
    dataset: &ExpressionDataset,
    splits: &SplitPlan,
    rge: &RgeConfig,
    train: &TrainConfig,
    ig: &IgConfig,
    max_iterations: usize,
) -> Result<RgeTrace> {
    drive(dataset, splits, new_trace(dataset, splits, rge, train, ig), Some(max_iterations), &mut |_| Ok(()))
}

/// Continues an interrupted trace. Iteration seeds depend only on the base
/// seed and the iteration index, so the result equals an uninterrupted run.
pub fn resume_rge(dataset: &ExpressionDataset, splits: &SplitPlan, trace: RgeTrace) -> Result<RgeTrace> {
    if trace.split_seed != splits.seed {
        return Err(Error::config("trace was recorded with a different split seed"));
    }
    resume_rge_with(dataset, splits, trace, &mut |_| Ok(()))
}

/// A fresh, empty trace for [`resume_rge_with`].
pub fn start_trace(
    dataset: &ExpressionDataset,
    splits: &SplitPlan,
    rge: &RgeConfig,
    train: &TrainConfig,
    ig: &IgConfig,
) -> RgeTrace {
    new_trace(dataset, splits, rge, train, ig)
}

/// Like [`resume_rge`], calling `observer` after every iteration and once
/// more when the trace is complete, e.g. to checkpoint it to disk.
pub fn resume_rge_with(
    dataset: &ExpressionDataset,
    splits: &SplitPlan,
    trace: RgeTrace,
    observer: &mut dyn FnMut(&RgeTrace) -> Result<()>,
) -> Result<RgeTrace> {
    if trace.split_seed != splits.seed {
        return Err(Error::config("trace was recorded with a different split seed"));
    }
    if trace.complete {
        return Ok(trace);
    }
    drive(dataset, splits, trace, None, observer)
}

fn evaluate_with(
    ds: &ExpressionDataset,
    genes: &[usize],
    splits: &SplitPlan,
    rge: &RgeConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<MetricBundle> {
    Ok(fit_with(ds, genes, splits, rge, train_cfg, seed)?.metrics)
}

fn fit_with(
    ds: &ExpressionDataset,
    genes: &[usize],
    splits: &SplitPlan,
    rge: &RgeConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<Fitted> {
    if genes.is_empty() {
        return Err(Error::contract("cannot evaluate an empty gene subset"));
    }
    if splits.test.is_empty() {
        return Err(Error::contract("no test samples to evaluate on"));
    }
    let mut f = fit_and_score(ds, genes, &splits.trainval, &splits.test, true, rge, train_cfg, seed)?;
    f.metrics.n_selected_genes = Some(genes.len());
    Ok(f)
}

/// The model behind [`evaluate_subset`]: trained on train+validation rows
/// over a graph that also holds the test rows.
pub fn fit_final(
    dataset: &ExpressionDataset,
    genes: &[usize],
    splits: &SplitPlan,
    rge: &RgeConfig,
    train: &TrainConfig,
) -> Result<Fitted> {
    rge.validate()?;
    fit_with(dataset, genes, splits, rge, train, derive_seed(rge.seed, FINAL_TAG))
}

/// Trains a fresh classifier on train+validation rows restricted to
/// `genes` and reports metrics on the test rows.
pub fn evaluate_subset(
    dataset: &ExpressionDataset,
    genes: &[usize],
    splits: &SplitPlan,
    rge: &RgeConfig,
    train: &TrainConfig,
) -> Result<MetricBundle> {
    rge.validate()?;
    evaluate_with(dataset, genes, splits, rge, train, derive_seed(rge.seed, FINAL_TAG))
}

/// Outer split, then preprocessing fitted on the train+validation rows.
pub fn prepare(
    raw: &ExpressionDataset,
    plan: &SplitPlan,
    opts: PreprocessOptions,
) -> Result<(Preprocessor, ExpressionDataset, SplitPlan)> {
    let splits = make_splits(&raw.labels, plan)?;
    let (pre, ds) = Preprocessor::fit_transform(raw, &splits.trainval, opts)?;
    Ok((pre, ds, splits))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatSummary {
    pub seeds: Vec<u64>,
    pub traces: Vec<RgeTrace>,
    /// Seeds whose run aborted, with the error text.
    pub failures: Vec<(u64, String)>,
    pub accuracy: Option<Summary>,
    pub macro_f1: Option<Summary>,
    pub positive_f1: Option<Summary>,
    pub n_selected: Option<Summary>,
    pub n_true_degs: Option<Summary>,
    pub deg_precision: Option<Summary>,
    /// Test accuracy of the ground-truth DE genes under the same splits.
    pub true_accuracy: Option<Summary>,
}

/// Runs the loop once per seed, each with a fresh inner split of the same
/// outer partition.
pub fn repeat_with_seeds(
    dataset: &ExpressionDataset,
    splits: &SplitPlan,
    rge: &RgeConfig,
    train: &TrainConfig,
    ig: &IgConfig,
    seeds: &[u64],
    with_truth: bool,
) -> Result<RepeatSummary> {
    if seeds.is_empty() {
        return Err(Error::config("repeats must be at least 1"));
    }
    let gt: Option<Vec<usize>> = dataset
        .gt_deg
        .as_ref()
        .map(|gt| (0..gt.len()).filter(|&i| gt[i]).collect());
    let mut traces = Vec::new();
    let mut failures = Vec::new();
    let mut truth = Vec::new();
    for &seed in seeds {
        let inner = splits.reshuffle_inner(&dataset.labels, seed)?;
        let cfg = RgeConfig { seed, ..rge.clone() };
        match run_rge(dataset, &inner, &cfg, train, ig) {
            Ok(t) => {
                if with_truth {
                    if let Some(gt) = gt.as_ref().filter(|g| !g.is_empty()) {
                        truth.push(evaluate_subset(dataset, gt, &inner, &cfg, train)?.accuracy);
                    }
                }
                traces.push(t);
            }
            Err(e @ (Error::Numeric(_) | Error::Data(_))) => {
                warn!("seed {seed} failed: {e}");
                failures.push((seed, e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    let collect = |f: &dyn Fn(&RgeTrace) -> Option<f64>| -> Option<Summary> {
        let v: Vec<f64> = traces.iter().filter_map(f).collect();
        Summary::of(&v)
    };
    Ok(RepeatSummary {
        seeds: seeds.to_vec(),
        accuracy: collect(&|t| t.final_test_metrics.as_ref().map(|m| m.accuracy)),
        macro_f1: collect(&|t| t.final_test_metrics.as_ref().map(|m| m.macro_f1)),
        positive_f1: collect(&|t| t.final_test_metrics.as_ref().map(|m| m.positive_f1)),
        n_selected: collect(&|t| Some(t.selected_genes.len() as f64)),
        n_true_degs: collect(&|t| t.deg_recovery.map(|d| d.n_true as f64)),
        deg_precision: collect(&|t| t.deg_recovery.map(|d| d.precision)),
        true_accuracy: Summary::of(&truth),
        traces,
        failures,
    })
}

/// [`repeat_with_seeds`] over `seed, seed+1, …, seed+repeats-1`.
pub fn repeat_and_summarize(
    dataset: &ExpressionDataset,
    splits: &SplitPlan,
    rge: &RgeConfig,
    train: &TrainConfig,
    ig: &IgConfig,
) -> Result<RepeatSummary> {
    rge.validate()?;
    let seeds: Vec<u64> = (0..rge.repeats as u64).map(|r| rge.seed.wrapping_add(r)).collect();
    repeat_with_seeds(dataset, splits, rge, train, ig, &seeds, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    #[test]
    fn floor_rule_schedule_for_a_thousand_genes() {
        let s = gene_count_schedule(1000, 0.10, 0.05);
        assert_eq!(
            s,
            vec![
                1000, 900, 810, 729, 657, 592, 533, 480, 432, 389, 351, 316, 285, 257, 232, 209, 189, 171, 154, 139,
                126, 114, 103, 93, 84, 76, 69, 63, 57, 52
            ]
        );
        assert_eq!(min_gene_count(1000, 0.05), 50);
        assert_eq!(min_gene_count(1000, 0.20), 200);
        assert_eq!(*gene_count_schedule(1000, 0.10, 0.20).last().unwrap(), 209);
    }

    #[test]
    fn first_removal_below_floor_means_one_iteration() {
        assert_eq!(gene_count_schedule(10, 0.5, 0.6), vec![10]);
        assert_eq!(gene_count_schedule(3, 0.1, 0.05), vec![3, 2, 1]);
        for w in gene_count_schedule(500, 0.07, 0.01).windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    fn rec(acc: f64, n: usize) -> IterationRecord {
        IterationRecord {
            iteration: 0,
            gene_indices: (0..n).collect(),
            genes: Vec::new(),
            val_accuracy: acc,
            val_macro_f1: acc,
            scores: vec![0.0; n],
            n_edges: 0,
            final_loss: None,
            failed: false,
            failure: None,
        }
    }

    #[test]
    fn ties_go_to_the_smaller_subset() {
        let r = vec![rec(0.8, 10), rec(0.9, 9), rec(0.9, 8), rec(0.85, 7)];
        assert_eq!(best_iteration(&r), Some(2));
        let mut f = r.clone();
        f[2].failed = true;
        assert_eq!(best_iteration(&f), Some(1));
    }

    #[test]
    fn weakest_breaks_ties_by_gene_index() {
        let scores = [0.5, 0.1, 0.1, 0.9, 0.0];
        let genes = [10, 7, 3, 1, 20];
        assert_eq!(weakest(&scores, &genes, 3), vec![4, 2, 1]);
    }

    #[test]
    fn failed_iteration_reuses_previous_scores() {
        let mut prev = rec(0.9, 5);
        prev.scores = vec![0.5, 0.4, 0.3, 0.2, 0.1];
        let mut last = rec(0.0, 4);
        last.gene_indices = vec![0, 1, 2, 3];
        last.failed = true;
        let next = next_genes(&last, Some(&prev), 0.25, 1).unwrap();
        assert_eq!(next, vec![0, 1, 2]);
    }

    pub(crate) fn small_cohort(n: usize, genes: usize, seed: u64) -> ExpressionDataset {
        let mut rng = Rng::new(seed);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let values = Matrix::from_fn(n, genes, |r, c| {
            let s = if c < 4 && labels[r] == 1 { 2.0 } else { 0.0 };
            s + rng.standard_normal()
        });
        let mut ds = ExpressionDataset::new(
            values,
            (0..genes).map(|g| format!("g{g:02}")).collect(),
            (0..n).map(|i| format!("s{i}")).collect(),
            labels,
            Stage::Transformed,
        )
        .unwrap();
        ds.gt_deg = Some((0..genes).map(|g| g < 4).collect());
        ds
    }

    fn quick() -> (RgeConfig, TrainConfig, IgConfig) {
        let rge = RgeConfig {
            elimination_rate: 0.25,
            min_gene_fraction: 0.2,
            repeats: 2,
            ..RgeConfig::with_seed(3)
        };
        let tr = TrainConfig {
            epochs: 40,
            ..TrainConfig::default()
        };
        (rge, tr, IgConfig::with_steps(8))
    }

    #[test]
    fn loop_shrinks_and_finds_signal() {
        let ds = small_cohort(60, 40, 1);
        let splits = make_splits(&ds.labels, &SplitPlan::new(5)).unwrap();
        let (rge, tr, ig) = quick();
        let t = run_rge(&ds, &splits, &rge, &tr, &ig).unwrap();
        assert_eq!(t.gene_counts(), gene_count_schedule(40, 0.25, 0.2));
        for w in t.iterations.windows(2) {
            assert!(w[1].gene_indices.iter().all(|g| w[0].gene_indices.contains(g)));
        }
        let best = t.best_iteration.unwrap();
        assert_eq!(t.selected_indices, t.iterations[best].gene_indices);
        let m = t.final_test_metrics.as_ref().unwrap();
        assert!(m.accuracy >= 0.75, "test accuracy {}", m.accuracy);
        let rec = t.deg_recovery.unwrap();
        assert_eq!(rec.n_selected, t.selected_genes.len());
        assert_eq!(rec.n_true, 4);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let ds = small_cohort(32, 12, 2);
        let splits = make_splits(&ds.labels, &SplitPlan::new(1)).unwrap();
        let (rge, tr, ig) = quick();
        let full = run_rge(&ds, &splits, &rge, &tr, &ig).unwrap();
        let partial = run_rge_partial(&ds, &splits, &rge, &tr, &ig, 2).unwrap();
        assert!(!partial.complete);
        assert_eq!(partial.iterations.len(), 2);
        let json = serde_json::to_string(&partial).unwrap();
        let back: RgeTrace = serde_json::from_str(&json).unwrap();
        assert_eq!(resume_rge(&ds, &splits, back).unwrap(), full);
    }

    #[test]
    fn identical_seeds_have_zero_spread() {
        let ds = small_cohort(32, 10, 4);
        let splits = make_splits(&ds.labels, &SplitPlan::new(2)).unwrap();
        let (rge, tr, ig) = quick();
        let s = repeat_with_seeds(&ds, &splits, &rge, &tr, &ig, &[9, 9], false).unwrap();
        assert_eq!(s.accuracy.unwrap().std, 0.0);
        assert_eq!(s.traces[0], s.traces[1]);
        let one = repeat_with_seeds(&ds, &splits, &rge, &tr, &ig, &[9], false).unwrap();
        assert_eq!(one.accuracy.unwrap().std, 0.0);
    }

    #[test]
    fn constant_subset_is_rejected() {
        let mut ds = small_cohort(20, 6, 5);
        for r in 0..20 {
            ds.values.set(r, 5, 1.0);
        }
        let splits = make_splits(&ds.labels, &SplitPlan::new(0)).unwrap();
        let (rge, tr, _) = quick();
        assert!(matches!(evaluate_subset(&ds, &[5], &splits, &rge, &tr), Err(Error::Data(_))));
        assert!(evaluate_subset(&ds, &[], &splits, &rge, &tr).is_err());
    }
}
