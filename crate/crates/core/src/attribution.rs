//! Integrated-gradients gene importance.
//!
//! For a target node only that node's feature row moves along the straight
//! path from the baseline; every other row stays fixed and the whole graph
//! forward runs at each step. Because the moving row enters the network
//! through the first-layer product `z · W0`, the path is integrated in that
//! 64-dimensional space and mapped back to genes once at the end.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Masks, SampleGraph};
use crate::model::{EvalTrace, GcnModel, HeadKind};
use crate::numcore::Var;
use crate::numcore::{Matrix, Tape};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    #[default]
    Zero,
    Custom(Vec<f64>),
}

impl Baseline {
    fn vector(&self, n_genes: usize) -> Result<Vec<f64>> {
        match self {
            Baseline::Zero => Ok(vec![0.0; n_genes]),
            Baseline::Custom(v) if v.len() == n_genes => Ok(v.clone()),
            Baseline::Custom(v) => Err(Error::config(format!(
                "baseline has {} entries for {n_genes} genes",
                v.len()
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IgConfig {
    pub steps: usize,
    pub baseline: Baseline,
    /// Nodes to average over; `None` means the graph's training nodes.
    pub target_nodes: Option<Vec<usize>>,
}

impl Default for IgConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            baseline: Baseline::Zero,
            target_nodes: None,
        }
    }
}

impl IgConfig {
    pub fn with_steps(steps: usize) -> Self {
        Self { steps, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("integrated gradients need at least one step"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_fingerprint: String,
    pub steps: usize,
    pub baseline: Baseline,
    pub n_targets: usize,
    /// Gene names in score order, when known.
    pub genes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionScores {
    pub scores: Vec<f64>,
    pub provenance: Provenance,
}

impl AttributionScores {
    pub fn with_gene_names(mut self, names: &[String]) -> Self {
        self.provenance.genes = names.to_vec();
        self
    }

    /// Scores divided by their maximum (all zeros stay zero).
    pub fn normalized(&self) -> Vec<f64> {
        let max = self.scores.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            self.scores.iter().map(|s| s / max).collect()
        } else {
            vec![0.0; self.scores.len()]
        }
    }

    /// Gene indices from most to least important; ties by index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        idx
    }

    /// `gene,score,normalized,rank` with rank 1 for the top gene.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["gene", "score", "normalized", "rank"])?;
        let norm = self.normalized();
        let mut rank = vec![0; self.scores.len()];
        for (r, g) in self.ranking().into_iter().enumerate() {
            rank[g] = r + 1;
        }
        for g in 0..self.scores.len() {
            let name = self.provenance.genes.get(g).cloned().unwrap_or_else(|| g.to_string());
            w.write_record([name, self.scores[g].to_string(), norm[g].to_string(), rank[g].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Midpoint-rule average of `grad(α)` over α ∈ [0, 1].
///
/// `grad` returns one gradient vector per output; the result has the same
/// layout.
pub fn midpoint_average<F>(steps: usize, mut grad: F) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64) -> Result<Vec<Vec<f64>>>,
{
    if steps == 0 {
        return Err(Error::config("integrated gradients need at least one step"));
    }
    let mut acc: Vec<Vec<f64>> = Vec::new();
    for t in 1..=steps {
        let alpha = (t as f64 - 0.5) / steps as f64;
        let g = grad(alpha)?;
        if acc.is_empty() {
            acc = g;
        } else {
            for (a, gi) in acc.iter_mut().zip(&g) {
                a.iter_mut().zip(gi).for_each(|(a, v)| *a += v);
            }
        }
    }
    for a in &mut acc {
        a.iter_mut().for_each(|v| *v /= steps as f64);
    }
    Ok(acc)
}

/// Integrated gradients of a generic multi-output function, given its
/// gradient at any point. Returns one attribution vector per output.
pub fn path_attributions<F>(input: &[f64], baseline: &[f64], steps: usize, mut grad: F) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&[f64]) -> Result<Vec<Vec<f64>>>,
{
    if input.len() != baseline.len() {
        return Err(Error::config("baseline and input differ in length"));
    }
    let diff: Vec<f64> = input.iter().zip(baseline).map(|(x, b)| x - b).collect();
    let avg = midpoint_average(steps, |alpha| {
        let point: Vec<f64> = baseline.iter().zip(&diff).map(|(b, d)| b + alpha * d).collect();
        grad(&point)
    })?;
    Ok(avg
        .into_iter()
        .map(|g| g.iter().zip(&diff).map(|(g, d)| g * d).collect())
        .collect())
}

/// Eval-mode model state shared by every target node.
struct Prepared<'a> {
    model: &'a GcnModel,
    graph: &'a SampleGraph,
    features: &'a Matrix,
    trace: EvalTrace,
    baseline: Vec<f64>,
}

/// Rows touched by moving one node, and the operator blocks between them.
struct NodePlan {
    /// Rows whose activations change and are still needed, per layer.
    sets: Vec<Vec<usize>>,
    /// `op[sets[0], node]`, then `op[sets[l], sets[l-1]]`, then the head block.
    blocks: Vec<Matrix>,
}

impl<'a> Prepared<'a> {
    fn new(model: &'a GcnModel, graph: &'a SampleGraph, features: &'a Matrix, baseline: &Baseline) -> Result<Self> {
        if model.norms.iter().any(|b| b.tracked == 0) {
            return Err(Error::contract("attribution needs a trained model with batch-norm statistics"));
        }
        let trace = model.eval_trace(&graph.norm_operator, features)?;
        Ok(Self {
            model,
            graph,
            features,
            trace,
            baseline: baseline.vector(model.n_genes)?,
        })
    }

    fn plan(&self, node: usize) -> NodePlan {
        let n_conv = self.model.n_layers();
        let extra = usize::from(self.model.config.head == HeadKind::GraphConv);
        let op = &self.graph.norm_operator;
        let sets: Vec<Vec<usize>> = (0..n_conv)
            .map(|l| self.graph.ball(node, (l + 1).min(n_conv - 1 - l + extra)))
            .collect();
        let mut blocks = vec![op.select(&sets[0], &[node])];
        for l in 1..n_conv {
            blocks.push(op.select(&sets[l], &sets[l - 1]));
        }
        if extra == 1 {
            blocks.push(op.select(&[node], &sets[n_conv - 1]));
        }
        NodePlan { sets, blocks }
    }

    /// Logits of `node` as a function of the first-layer shift `u`, where
    /// the node's row moved by `Δz` gives `u = Δz · W0`.
    fn restricted_forward(&self, plan: &NodePlan, u: &Matrix, tape: &mut Tape) -> Result<(Var, Var)> {
        let m = self.model;
        let uv = tape.leaf(u.clone());
        let block = tape.constant(plan.blocks[0].clone());
        let mut delta = tape.matmul(block, uv)?;
        let mut h = delta;
        for l in 0..m.n_layers() {
            let rows = &plan.sets[l];
            let base_pre = tape.constant(self.trace.pre[l].select_rows(rows));
            let mut z = tape.add(base_pre, delta)?;
            if let Some((scale, shift)) = self.trace.affine.get(l) {
                let s = tape.constant(scale.clone());
                let b = tape.constant(shift.clone());
                let zs = tape.mul_row(z, s)?;
                z = tape.add_row(zs, b)?;
            }
            h = tape.relu(z);
            if l + 1 < m.n_layers() {
                let base_post = tape.constant(self.trace.post[l].select_rows(rows));
                let dh = tape.sub(h, base_post)?;
                let w = tape.constant(m.convs[l + 1].clone());
                let dw = tape.matmul(dh, w)?;
                let block = tape.constant(plan.blocks[l + 1].clone());
                delta = tape.matmul(block, dw)?;
            }
        }
        let wh = tape.constant(m.head_weight.clone());
        let mut out = tape.matmul(h, wh)?;
        if m.config.head == HeadKind::GraphConv {
            let block = tape.constant(plan.blocks[m.n_layers()].clone());
            out = tape.matmul(block, out)?;
        }
        let bias = tape.constant(m.head_bias.clone());
        let logits = tape.add_row(out, bias)?;
        Ok((uv, logits))
    }

    /// Attributions of `node` for every class, `[class][gene]`.
    fn node_attributions(&self, node: usize, steps: usize) -> Result<Vec<Vec<f64>>> {
        let m = self.model;
        let x = self.features.row(node);
        let diff: Vec<f64> = x.iter().zip(&self.baseline).map(|(x, b)| x - b).collect();
        let plan = self.plan(node);
        let w0 = &m.convs[0];
        let v = Matrix::row_vector(diff.clone()).matmul(w0)?;
        let avg_u = midpoint_average(steps, |alpha| {
            let mut tape = Tape::new();
            let (uv, logits) = self.restricted_forward(&plan, &v.scale(alpha - 1.0), &mut tape)?;
            (0..m.n_classes)
                .map(|c| {
                    let root = tape.pick(logits, 0, c)?;
                    let g = tape.backward(root)?;
                    Ok(g.get_or_zeros(uv, &v).into_data())
                })
                .collect()
        })?;
        let mut out = Vec::with_capacity(m.n_classes);
        for du in avg_u {
            // dF/dz = dF/du · W0ᵀ
            let dz = Matrix::row_vector(du).matmul(&w0.transpose())?;
            out.push(dz.data().iter().zip(&diff).map(|(g, d)| g * d).collect());
        }
        Ok(out)
    }
}

fn check_node(graph: &SampleGraph, node: usize) -> Result<()> {
    if node >= graph.n_nodes {
        return Err(Error::contract(format!("node {node} out of range for {} nodes", graph.n_nodes)));
    }
    Ok(())
}

/// Per-gene attributions of the class-`class` logit at `node`.
pub fn integrated_gradients(
    model: &GcnModel,
    graph: &SampleGraph,
    features: &Matrix,
    node: usize,
    class: usize,
    config: &IgConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    check_node(graph, node)?;
    if class >= model.n_classes {
        return Err(Error::contract(format!("class {class} out of range for {} classes", model.n_classes)));
    }
    let prep = Prepared::new(model, graph, features, &config.baseline)?;
    Ok(prep.node_attributions(node, config.steps)?.swap_remove(class))
}

/// Attributions of every class logit at `node`, indexed `[class][gene]`.
pub fn node_attributions(
    model: &GcnModel,
    graph: &SampleGraph,
    features: &Matrix,
    node: usize,
    config: &IgConfig,
) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    check_node(graph, node)?;
    Prepared::new(model, graph, features, &config.baseline)?.node_attributions(node, config.steps)
}

/// Mean over target nodes of `Σ_c |IG_c|` per gene.
pub fn aggregate_importance(
    model: &GcnModel,
    graph: &SampleGraph,
    features: &Matrix,
    config: &IgConfig,
) -> Result<AttributionScores> {
    config.validate()?;
    let targets = match &config.target_nodes {
        Some(t) => t.clone(),
        None => Masks::indices(&graph.masks.train),
    };
    if targets.is_empty() {
        return Err(Error::contract("no target nodes for attribution"));
    }
    for &n in &targets {
        check_node(graph, n)?;
    }
    let prep = Prepared::new(model, graph, features, &config.baseline)?;
    let mut scores = vec![0.0; model.n_genes];
    for &n in &targets {
        for ig in prep.node_attributions(n, config.steps)? {
            scores.iter_mut().zip(&ig).for_each(|(s, v)| *s += v.abs());
        }
    }
    scores.iter_mut().for_each(|s| *s /= targets.len() as f64);
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite attribution score".into()));
    }
    Ok(AttributionScores {
        scores,
        provenance: Provenance {
            model_fingerprint: model.fingerprint(),
            steps: config.steps,
            baseline: config.baseline.clone(),
            n_targets: targets.len(),
            genes: Vec::new(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{train, Mode, ModelConfig, TrainConfig};
    use crate::numcore::Rng;
    use crate::report::spearman;

    fn trained(n: usize, genes: usize, seed: u64, head: HeadKind) -> (GcnModel, SampleGraph, Matrix) {
        let mut rng = Rng::new(seed);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let x = Matrix::from_fn(n, genes, |r, c| {
            let s = if c < 3 && labels[r] == 1 { 1.5 } else { 0.0 };
            s + rng.standard_normal()
        });
        let tr: Vec<usize> = (0..n * 3 / 4).collect();
        let val: Vec<usize> = (n * 3 / 4..n).collect();
        let g = SampleGraph::build(&x, 0.3)
            .unwrap()
            .with_masks(Masks::new(n, &tr, &val, &[]).unwrap())
            .unwrap();
        let cfg = ModelConfig {
            head,
            ..ModelConfig::default()
        };
        let mut m = GcnModel::new(genes, 2, cfg, seed).unwrap();
        let tc = TrainConfig {
            epochs: 40,
            ..TrainConfig::with_seed(seed)
        };
        train(&mut m, &g, &x, &labels, &tc).unwrap();
        (m, g, x)
    }

    /// Straightforward IG: whole-graph tape forward at each step.
    fn full_graph_ig(m: &GcnModel, g: &SampleGraph, x: &Matrix, node: usize, class: usize, steps: usize) -> Vec<f64> {
        let row = x.row(node).to_vec();
        path_attributions(&row, &vec![0.0; row.len()], steps, |z| {
            let mut xa = x.clone();
            xa.row_mut(node).copy_from_slice(z);
            let mut tape = Tape::new();
            let params = m.leaf_params(&mut tape);
            let op = tape.constant(g.norm_operator.clone());
            let xv = tape.leaf(xa);
            let f = m.forward_tape(&mut tape, &params, op, xv, false, Mode::Eval, None)?;
            let root = tape.pick(f.logits, node, class)?;
            let grads = tape.backward(root)?;
            Ok(vec![grads.get(xv).unwrap().row(node).to_vec()])
        })
        .unwrap()
        .swap_remove(0)
    }

    fn logit(m: &GcnModel, g: &SampleGraph, x: &Matrix, node: usize, class: usize) -> f64 {
        m.eval_trace(&g.norm_operator, x).unwrap().logits.get(node, class)
    }

    #[test]
    fn linear_surrogate_is_exact_for_any_step_count() {
        let w = [0.5, -2.0, 3.0, 0.0];
        let x = [1.0, 2.0, -1.0, 4.0];
        for steps in [1, 50] {
            let ig = path_attributions(&x, &[0.0; 4], steps, |_| Ok(vec![w.to_vec()])).unwrap();
            for i in 0..4 {
                assert_eq!(ig[0][i], w[i] * x[i]);
            }
        }
        assert!(path_attributions(&x, &[0.0; 4], 0, |_| Ok(vec![w.to_vec()])).is_err());
    }

    #[test]
    fn restricted_forward_matches_full_forward() {
        for head in [HeadKind::Affine, HeadKind::GraphConv] {
            let (m, g, x) = trained(24, 6, 3, head);
            let prep = Prepared::new(&m, &g, &x, &Baseline::Zero).unwrap();
            let full = logit(&m, &g, &x, 0, 0);
            for node in [0, 5, 17] {
                let plan = prep.plan(node);
                let mut tape = Tape::new();
                let (_, logits) = prep.restricted_forward(&plan, &Matrix::zeros(1, 64), &mut tape).unwrap();
                let want = m.eval_trace(&g.norm_operator, &x).unwrap().logits.row(node).to_vec();
                let got = tape.value(logits).row(0).to_vec();
                for (a, b) in got.iter().zip(&want) {
                    assert!((a - b).abs() < 1e-12);
                }
                // and at the baseline end of the path
                let mut xb = x.clone();
                xb.row_mut(node).iter_mut().for_each(|v| *v = 0.0);
                let v = Matrix::row_vector(x.row(node).to_vec()).matmul(&m.convs[0]).unwrap();
                let mut tape = Tape::new();
                let (_, logits) = prep.restricted_forward(&plan, &v.scale(-1.0), &mut tape).unwrap();
                let want = m.eval_trace(&g.norm_operator, &xb).unwrap().logits;
                assert!((tape.value(logits).get(0, 1) - want.get(node, 1)).abs() < 1e-10);
            }
            assert!(full.is_finite());
        }
    }

    #[test]
    fn matches_whole_graph_integration() {
        for head in [HeadKind::Affine, HeadKind::GraphConv] {
            let (m, g, x) = trained(20, 5, 8, head);
            for (node, class) in [(2, 0), (11, 1)] {
                let fast = integrated_gradients(&m, &g, &x, node, class, &IgConfig::with_steps(20)).unwrap();
                let slow = full_graph_ig(&m, &g, &x, node, class, 20);
                for (a, b) in fast.iter().zip(&slow) {
                    assert!((a - b).abs() < 1e-10, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn baseline_equal_to_input_gives_zero() {
        let (m, g, x) = trained(16, 5, 1, HeadKind::Affine);
        let cfg = IgConfig {
            baseline: Baseline::Custom(x.row(4).to_vec()),
            ..IgConfig::default()
        };
        let ig = integrated_gradients(&m, &g, &x, 4, 1, &cfg).unwrap();
        assert!(ig.iter().all(|v| *v == 0.0));
        let bad = IgConfig {
            baseline: Baseline::Custom(vec![0.0; 3]),
            ..IgConfig::default()
        };
        assert!(integrated_gradients(&m, &g, &x, 4, 1, &bad).is_err());
        assert!(integrated_gradients(&m, &g, &x, 4, 1, &IgConfig::with_steps(0)).is_err());
    }

    #[test]
    fn completeness_improves_with_steps() {
        let (m, g, x) = trained(30, 8, 4, HeadKind::Affine);
        let node = 7;
        let class = 1;
        let mut xb = x.clone();
        xb.row_mut(node).iter_mut().for_each(|v| *v = 0.0);
        let gap = logit(&m, &g, &x, node, class) - logit(&m, &g, &xb, node, class);
        let err = |steps| {
            let ig = integrated_gradients(&m, &g, &x, node, class, &IgConfig::with_steps(steps)).unwrap();
            (ig.iter().sum::<f64>() - gap).abs() / gap.abs()
        };
        let coarse = err(10);
        let fine = err(512);
        assert!(fine < 1e-3, "relative completeness error {fine}");
        assert!(fine <= coarse);
    }

    #[test]
    fn dead_gene_scores_zero() {
        let (mut m, g, x) = trained(16, 6, 2, HeadKind::Affine);
        m.convs[0].row_mut(3).iter_mut().for_each(|v| *v = 0.0);
        let s = aggregate_importance(&m, &g, &x, &IgConfig::default()).unwrap();
        assert_eq!(s.scores[3], 0.0);
        assert!(s.scores.iter().all(|v| *v >= 0.0 && v.is_finite()));
        assert_eq!(s.provenance.n_targets, 12);
    }

    #[test]
    fn single_target_aggregation_is_absolute_ig_sum() {
        let (m, g, x) = trained(16, 5, 6, HeadKind::Affine);
        let cfg = IgConfig {
            target_nodes: Some(vec![9]),
            ..IgConfig::default()
        };
        let s = aggregate_importance(&m, &g, &x, &cfg).unwrap();
        let c0 = integrated_gradients(&m, &g, &x, 9, 0, &cfg).unwrap();
        let c1 = integrated_gradients(&m, &g, &x, 9, 1, &cfg).unwrap();
        for i in 0..5 {
            assert!((s.scores[i] - (c0[i].abs() + c1[i].abs())).abs() < 1e-15);
        }
        let empty = IgConfig {
            target_nodes: Some(vec![]),
            ..IgConfig::default()
        };
        assert!(aggregate_importance(&m, &g, &x, &empty).is_err());
    }

    #[test]
    fn aggregation_matches_external_loop() {
        let (m, g, x) = trained(14, 4, 10, HeadKind::Affine);
        let cfg = IgConfig::with_steps(12);
        let s = aggregate_importance(&m, &g, &x, &cfg).unwrap();
        let targets = Masks::indices(&g.masks.train);
        let mut want = [0.0; 4];
        for &n in &targets {
            for c in 0..2 {
                let ig = full_graph_ig(&m, &g, &x, n, c, 12);
                for i in 0..4 {
                    want[i] += ig[i].abs() / targets.len() as f64;
                }
            }
        }
        for i in 0..4 {
            assert!((s.scores[i] - want[i]).abs() < 1e-12, "{} vs {}", s.scores[i], want[i]);
        }
    }

    #[test]
    fn ranking_is_stable_under_step_refinement() {
        let (m, g, x) = trained(30, 12, 5, HeadKind::Affine);
        let a = aggregate_importance(&m, &g, &x, &IgConfig::with_steps(50)).unwrap();
        let b = aggregate_importance(&m, &g, &x, &IgConfig::with_steps(500)).unwrap();
        let rho = spearman(&a.scores, &b.scores);
        assert!(rho > 0.95, "spearman {rho}");
    }

    #[test]
    fn permuting_genes_permutes_scores() {
        let (m, g, x) = trained(18, 6, 7, HeadKind::Affine);
        let perm = [4, 0, 5, 2, 1, 3];
        let xp = x.select_cols(&perm);
        let mut mp = m.clone();
        mp.convs[0] = m.convs[0].select_rows(&perm);
        let gp = SampleGraph::build(&xp, 0.3).unwrap().with_masks(g.masks.clone()).unwrap();
        let a = aggregate_importance(&m, &g, &x, &IgConfig::with_steps(10)).unwrap();
        let b = aggregate_importance(&mp, &gp, &xp, &IgConfig::with_steps(10)).unwrap();
        for (j, &p) in perm.iter().enumerate() {
            assert!((b.scores[j] - a.scores[p]).abs() < 1e-10);
        }
    }

    #[test]
    fn head_bias_does_not_move_attributions() {
        let (m, g, x) = trained(16, 5, 9, HeadKind::Affine);
        let mut shifted = m.clone();
        shifted.head_bias.set(0, 1, shifted.head_bias.get(0, 1) + 3.7);
        let a = integrated_gradients(&m, &g, &x, 3, 1, &IgConfig::default()).unwrap();
        let b = integrated_gradients(&shifted, &g, &x, 3, 1, &IgConfig::default()).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_export_ranks_genes() {
        let s = AttributionScores {
            scores: vec![0.2, 0.8, 0.2, 0.0],
            provenance: Provenance {
                model_fingerprint: String::new(),
                steps: 50,
                baseline: Baseline::Zero,
                n_targets: 1,
                genes: Vec::new(),
            },
        }
        .with_gene_names(&["a".into(), "b".into(), "c".into(), "d".into()]);
        assert_eq!(s.ranking(), vec![1, 0, 2, 3]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        s.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert!(text.starts_with("gene,score,normalized,rank\na,0.2,0.25,2\nb,0.8,1,1\n"));
    }
}
