//! Three-layer graph convolutional classifier.
//!
//! Each graph convolution computes `op · H · W` with the fixed normalized
//! operator `op`. The first two are followed by batch norm; every hidden
//! layer then applies ReLU and (in training) dropout. A 16 → K affine head
//! produces the logits. With the identity operator the same network is a
//! plain MLP.

mod checkpoint;
mod loss;
mod optim;
mod train;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SampleGraph;
use crate::numcore::{Matrix, Rng, Tape, Var};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use loss::{weighted_ce_loss, ClassWeights};
pub use optim::AdamW;
pub use train::{loss_gradients, train, train_mlp, LossGradients, TrainConfig, TrainReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    /// `H · W + b`.
    Affine,
    /// `op · H · W + b`, a fourth graph convolution.
    GraphConv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    /// Number of leading graph convolutions followed by batch norm.
    pub batch_norm_layers: usize,
    pub dropout: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub head: HeadKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 32, 16],
            batch_norm_layers: 2,
            dropout: 0.4,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            head: HeadKind::Affine,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("hidden widths must be positive and non-empty"));
        }
        if self.batch_norm_layers > self.hidden.len() {
            return Err(Error::config("more batch-norm layers than graph convolutions"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0 && self.bn_eps > 0.0) {
            return Err(Error::config("batch-norm momentum must lie in (0, 1] and eps be positive"));
        }
        Ok(())
    }
}

/// Batch-norm affine parameters and running statistics for one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Matrix,
    pub beta: Matrix,
    pub running_mean: Matrix,
    pub running_var: Matrix,
    pub tracked: u64,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        Self {
            gamma: Matrix::ones(1, width),
            beta: Matrix::zeros(1, width),
            running_mean: Matrix::zeros(1, width),
            running_var: Matrix::ones(1, width),
            tracked: 0,
        }
    }

    /// Folds eval-mode normalization into `x · scale + shift`.
    pub fn eval_affine(&self, eps: f64) -> (Matrix, Matrix) {
        affine_from_stats(&self.gamma, &self.beta, &self.running_mean, &self.running_var, eps)
    }

    fn update(&mut self, mean: &Matrix, biased_var: &Matrix, n: usize, momentum: f64) {
        let correction = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
        for c in 0..mean.cols() {
            let rm = self.running_mean.get(0, c);
            let rv = self.running_var.get(0, c);
            self.running_mean.set(0, c, (1.0 - momentum) * rm + momentum * mean.get(0, c));
            self.running_var
                .set(0, c, (1.0 - momentum) * rv + momentum * biased_var.get(0, c) * correction);
        }
        self.tracked += 1;
    }
}

fn affine_from_stats(gamma: &Matrix, beta: &Matrix, mean: &Matrix, var: &Matrix, eps: f64) -> (Matrix, Matrix) {
    let w = gamma.cols();
    let mut scale = Matrix::zeros(1, w);
    let mut shift = Matrix::zeros(1, w);
    for c in 0..w {
        let s = gamma.get(0, c) / (var.get(0, c) + eps).sqrt();
        scale.set(0, c, s);
        shift.set(0, c, beta.get(0, c) - mean.get(0, c) * s);
    }
    (scale, shift)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcnModel {
    pub config: ModelConfig,
    pub n_genes: usize,
    pub n_classes: usize,
    pub convs: Vec<Matrix>,
    pub head_weight: Matrix,
    pub head_bias: Matrix,
    pub norms: Vec<BatchNorm>,
    pub mode: Mode,
}

/// Tape handles for every trainable parameter, in [`GcnModel::params`] order.
pub(crate) struct ParamVars {
    pub all: Vec<Var>,
}

/// Intermediate values of an eval-mode forward pass.
#[derive(Clone, Debug)]
pub struct EvalTrace {
    /// `op · H_l · W_l` for every graph convolution.
    pub pre: Vec<Matrix>,
    /// Hidden activations after each convolution; `post[l]` feeds layer `l+1`.
    pub post: Vec<Matrix>,
    /// Per-layer `(scale, shift)` of the batch norm actually applied.
    pub affine: Vec<(Matrix, Matrix)>,
    pub logits: Matrix,
}

pub(crate) struct TapeForward {
    pub logits: Var,
    /// Batch statistics `(mean, biased var)` per batch-norm layer.
    pub batch_stats: Vec<(Matrix, Matrix)>,
    /// Normalized activations before `gamma, beta`, per batch-norm layer.
    #[cfg_attr(not(test), allow(dead_code))]
    pub normalized: Vec<Var>,
}

fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| (2.0 * rng.unit() - 1.0) * limit)
}

impl GcnModel {
    /// Glorot-uniform weights from a seeded stream; zero head bias.
    pub fn new(n_genes: usize, n_classes: usize, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if n_genes == 0 || n_classes < 2 {
            return Err(Error::config(format!(
                "need at least one gene and two classes, got {n_genes} genes and {n_classes} classes"
            )));
        }
        let mut rng = Rng::new(seed);
        let mut dims = vec![n_genes];
        dims.extend(&config.hidden);
        let convs = dims.windows(2).map(|w| glorot(w[0], w[1], &mut rng)).collect();
        let last = *dims.last().expect("non-empty");
        let head_weight = glorot(last, n_classes, &mut rng);
        let norms = config.hidden[..config.batch_norm_layers]
            .iter()
            .map(|&w| BatchNorm::new(w))
            .collect();
        Ok(Self {
            config,
            n_genes,
            n_classes,
            convs,
            head_weight,
            head_bias: Matrix::zeros(1, n_classes),
            norms,
            mode: Mode::Train,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.convs.len()
    }

    /// Number of operator applications between input and logits.
    pub fn n_propagations(&self) -> usize {
        self.convs.len() + usize::from(self.config.head == HeadKind::GraphConv)
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Trainable parameters: conv weights, head weight, head bias, then
    /// gamma and beta of each batch norm.
    pub fn params(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = self.convs.iter().collect();
        out.push(&self.head_weight);
        out.push(&self.head_bias);
        for bn in &self.norms {
            out.push(&bn.gamma);
            out.push(&bn.beta);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = self.convs.iter_mut().collect();
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        for bn in &mut self.norms {
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
        }
        out
    }

    /// Which parameters receive weight decay (weights only).
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut out = vec![true; self.convs.len() + 1];
        out.push(false);
        out.extend(std::iter::repeat_n(false, 2 * self.norms.len()));
        out
    }

    fn check_input(&self, op: &Matrix, x: &Matrix) -> Result<()> {
        if x.cols() != self.n_genes {
            return Err(Error::Dimension {
                op: "forward",
                lhs: x.shape(),
                rhs: (x.rows(), self.n_genes),
            });
        }
        if op.shape() != (x.rows(), x.rows()) {
            return Err(Error::Dimension {
                op: "forward",
                lhs: op.shape(),
                rhs: (x.rows(), x.rows()),
            });
        }
        Ok(())
    }

    pub(crate) fn leaf_params(&self, tape: &mut Tape) -> ParamVars {
        ParamVars {
            all: self.params().into_iter().map(|p| tape.leaf(p.clone())).collect(),
        }
    }

    /// Recorded forward pass.
    ///
    /// `x` is either the raw features (`propagated == false`) or the
    /// precomputed product `op · X`. Train mode uses batch statistics;
    /// dropout is applied only when `dropout` is given.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn forward_tape(
        &self,
        tape: &mut Tape,
        params: &ParamVars,
        op: Var,
        x: Var,
        propagated: bool,
        mode: Mode,
        mut dropout: Option<&mut Rng>,
    ) -> Result<TapeForward> {
        let n_conv = self.convs.len();
        let eps = self.config.bn_eps;
        let mut batch_stats = Vec::new();
        let mut normalized = Vec::new();
        let mut h = x;
        for l in 0..n_conv {
            let w = params.all[l];
            let p = if l == 0 && propagated {
                tape.matmul(h, w)?
            } else {
                let hw = tape.matmul(h, w)?;
                tape.matmul(op, hw)?
            };
            let mut z = p;
            if l < self.norms.len() {
                let gamma = params.all[n_conv + 2 + 2 * l];
                let beta = params.all[n_conv + 3 + 2 * l];
                let use_batch = mode == Mode::Train || self.norms[l].tracked == 0;
                if mode == Mode::Eval && self.norms[l].tracked == 0 {
                    warn!("eval forward before any training step; using batch statistics");
                }
                if use_batch {
                    let mean = tape.col_mean(z);
                    let neg = tape.scale(mean, -1.0);
                    let centered = tape.add_row(z, neg)?;
                    let sq = tape.mul(centered, centered)?;
                    let var = tape.col_mean(sq);
                    batch_stats.push((tape.value(mean).clone(), tape.value(var).clone()));
                    let var_eps = tape.offset(var, eps);
                    let inv = tape.powf(var_eps, -0.5)?;
                    let xhat = tape.mul_row(centered, inv)?;
                    normalized.push(xhat);
                    let scaled = tape.mul_row(xhat, gamma)?;
                    z = tape.add_row(scaled, beta)?;
                } else {
                    let bn = &self.norms[l];
                    let mean = tape.constant(bn.running_mean.clone());
                    let inv = tape.constant(bn.running_var.map(|v| 1.0 / (v + eps).sqrt()));
                    let neg = tape.scale(mean, -1.0);
                    let centered = tape.add_row(z, neg)?;
                    let xhat = tape.mul_row(centered, inv)?;
                    normalized.push(xhat);
                    let scaled = tape.mul_row(xhat, gamma)?;
                    z = tape.add_row(scaled, beta)?;
                }
            }
            let mut a = tape.relu(z);
            if mode == Mode::Train && self.config.dropout > 0.0 {
                if let Some(rng) = dropout.as_deref_mut() {
                    let (r, c) = tape.value(a).shape();
                    let mask = tape.constant(rng.dropout_mask(r, c, self.config.dropout));
                    a = tape.mul(a, mask)?;
                }
            }
            h = a;
        }
        let hw = tape.matmul(h, params.all[n_conv])?;
        let pre = match self.config.head {
            HeadKind::Affine => hw,
            HeadKind::GraphConv => tape.matmul(op, hw)?,
        };
        let logits = tape.add_row(pre, params.all[n_conv + 1])?;
        Ok(TapeForward {
            logits,
            batch_stats,
            normalized,
        })
    }

    /// Eval-mode forward with every intermediate kept.
    pub fn eval_trace(&self, op: &Matrix, x: &Matrix) -> Result<EvalTrace> {
        self.check_input(op, x)?;
        let eps = self.config.bn_eps;
        let mut pre = Vec::new();
        let mut post = Vec::new();
        let mut affine = Vec::new();
        let mut h = x.clone();
        for (l, w) in self.convs.iter().enumerate() {
            let p = op.matmul(&h.matmul(w)?)?;
            let z = if let Some(bn) = self.norms.get(l) {
                let (scale, shift) = if bn.tracked == 0 {
                    warn!("eval forward before any training step; using batch statistics");
                    let mean = p.col_means();
                    let var = p.sub(&Matrix::zeros(p.rows(), p.cols()).add_row(&mean)?)?;
                    let var = var.mul(&var)?.col_means();
                    affine_from_stats(&bn.gamma, &bn.beta, &mean, &var, eps)
                } else {
                    bn.eval_affine(eps)
                };
                let z = p.mul_row(&scale)?.add_row(&shift)?;
                affine.push((scale, shift));
                z
            } else {
                p.clone()
            };
            pre.push(p);
            h = z.relu();
            post.push(h.clone());
        }
        let hw = h.matmul(&self.head_weight)?;
        let hw = match self.config.head {
            HeadKind::Affine => hw,
            HeadKind::GraphConv => op.matmul(&hw)?,
        };
        let logits = hw.add_row(&self.head_bias)?;
        Ok(EvalTrace {
            pre,
            post,
            affine,
            logits,
        })
    }

    /// Logits for every node. Train mode draws dropout from `rng` when
    /// given but leaves the running statistics untouched.
    pub fn forward(&self, op: &Matrix, x: &Matrix, mode: Mode, rng: Option<&mut Rng>) -> Result<Matrix> {
        match mode {
            Mode::Eval => Ok(self.eval_trace(op, x)?.logits),
            Mode::Train => {
                self.check_input(op, x)?;
                let mut tape = Tape::new();
                let params = self.leaf_params(&mut tape);
                let opv = tape.constant(op.clone());
                let xv = tape.constant(x.clone());
                let fwd = self.forward_tape(&mut tape, &params, opv, xv, false, Mode::Train, rng)?;
                Ok(tape.value(fwd.logits).clone())
            }
        }
    }

    /// Identity-operator forward: the MLP baseline.
    pub fn mlp_forward(&self, x: &Matrix, mode: Mode, rng: Option<&mut Rng>) -> Result<Matrix> {
        self.forward(&Matrix::identity(x.rows()), x, mode, rng)
    }

    /// Short content hash of the parameters and running statistics.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for m in self.params() {
            for v in m.data() {
                h.update(v.to_le_bytes());
            }
        }
        for bn in &self.norms {
            for v in bn.running_mean.data().iter().chain(bn.running_var.data()) {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Class per node plus softmax probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub classes: Vec<usize>,
    pub probabilities: Matrix,
}

pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut p = logits.clone();
    for r in 0..p.rows() {
        let row = p.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    p
}

/// Argmax per row; ties go to the lowest class index.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows())
        .map(|r| {
            let row = m.row(r);
            let mut best = 0;
            for (c, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Eval-mode class predictions for every node of `graph`.
pub fn predict(model: &GcnModel, graph: &SampleGraph, features: &Matrix) -> Result<Prediction> {
    let logits = model.eval_trace(&graph.norm_operator, features)?.logits;
    Ok(Prediction {
        classes: argmax_rows(&logits),
        probabilities: softmax_rows(&logits),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(rng: &mut Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.standard_normal())
    }

    #[test]
    fn isolated_node_zero_weights_gives_bias() {
        let mut m = GcnModel::new(3, 2, ModelConfig::default(), 0).unwrap();
        m.convs.iter_mut().for_each(|w| *w = Matrix::zeros(w.rows(), w.cols()));
        m.head_bias = Matrix::row_vector(vec![0.25, -1.5]);
        for bn in &mut m.norms {
            bn.tracked = 1;
        }
        let logits = m.forward(&Matrix::identity(1), &Matrix::row_vector(vec![1.0, 2.0, 3.0]), Mode::Eval, None).unwrap();
        assert_eq!(logits.data(), &[0.25, -1.5]);
    }

    #[test]
    fn eval_is_deterministic_and_matches_tape() {
        let mut rng = Rng::new(2);
        let mut m = GcnModel::new(5, 3, ModelConfig::default(), 4).unwrap();
        for bn in &mut m.norms {
            bn.running_mean = random(&mut rng, 1, bn.gamma.cols());
            bn.running_var = bn.running_mean.map(|v| 0.5 + v * v);
            bn.tracked = 3;
        }
        let x = random(&mut rng, 6, 5);
        let g = SampleGraph::build(&x, 0.3).unwrap();
        let a = m.forward(&g.norm_operator, &x, Mode::Eval, None).unwrap();
        let b = m.forward(&g.norm_operator, &x, Mode::Eval, None).unwrap();
        assert_eq!(a, b);
        let mut tape = Tape::new();
        let params = m.leaf_params(&mut tape);
        let op = tape.constant(g.norm_operator.clone());
        let xv = tape.constant(x.clone());
        let f = m.forward_tape(&mut tape, &params, op, xv, false, Mode::Eval, None).unwrap();
        assert!(tape.value(f.logits).max_abs_diff(&a).unwrap() < 1e-12);
    }

    #[test]
    fn train_mode_batch_norm_is_standardized() {
        let mut rng = Rng::new(9);
        let m = GcnModel::new(8, 2, ModelConfig::default(), 1).unwrap();
        let x = random(&mut rng, 12, 8);
        let g = SampleGraph::build(&x, 0.4).unwrap();
        let mut tape = Tape::new();
        let params = m.leaf_params(&mut tape);
        let op = tape.constant(g.norm_operator.clone());
        let xv = tape.constant(x);
        let f = m.forward_tape(&mut tape, &params, op, xv, false, Mode::Train, None).unwrap();
        for (v, (_, batch_var)) in f.normalized.iter().zip(&f.batch_stats) {
            let z = tape.value(*v);
            let n = z.rows() as f64;
            for c in 0..z.cols() {
                let col = z.column(c);
                let mean = col.iter().sum::<f64>() / n;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                assert!(mean.abs() < 1e-8);
                // eps keeps the normalized variance at var / (var + eps)
                let bv = batch_var.get(0, c);
                let want = bv / (bv + m.config.bn_eps);
                assert!((var - want).abs() < 1e-10, "var {var} want {want}");
                assert!((var - 1.0).abs() < m.config.bn_eps / bv + 1e-10);
            }
        }
    }

    #[test]
    fn identity_operator_gcn_equals_mlp() {
        let mut rng = Rng::new(5);
        let mut m = GcnModel::new(4, 2, ModelConfig::default(), 7).unwrap();
        for bn in &mut m.norms {
            bn.tracked = 1;
        }
        let x = random(&mut rng, 5, 4);
        let a = m.forward(&SampleGraph::isolated(5).norm_operator, &x, Mode::Eval, None).unwrap();
        let b = m.mlp_forward(&x, Mode::Eval, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn argmax_tie_rule() {
        let m = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 1.0], vec![0.0, 3.0]]).unwrap();
        assert_eq!(argmax_rows(&m), vec![0, 0, 1]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let m = GcnModel::new(4, 2, ModelConfig::default(), 7).unwrap();
        assert!(m.forward(&Matrix::identity(3), &Matrix::zeros(3, 5), Mode::Eval, None).is_err());
        assert!(m.forward(&Matrix::identity(2), &Matrix::zeros(3, 4), Mode::Eval, None).is_err());
    }
}
