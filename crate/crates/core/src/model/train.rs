use log::debug;
use serde::{Deserialize, Serialize};

use super::loss::{weighted_ce_tape, ClassWeights};
use super::optim::AdamW;
use super::{argmax_rows, GcnModel, Mode};
use crate::error::{Error, Result};
use crate::graph::SampleGraph;
use crate::numcore::{derive_seed, Matrix, Rng, Tape};

const DROPOUT_STREAM: u64 = 0xd20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 0.01,
            weight_decay: 1e-3,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.weight_decay >= 0.0 && self.adam_eps > 0.0) {
            return Err(Error::config("learning rate and weight decay must be non-negative, eps positive"));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::config("betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Training loss of each epoch, measured before its update.
    pub losses: Vec<f64>,
    pub train_accuracy: f64,
}

/// Loss and gradients of one full-batch train-mode pass without dropout.
#[derive(Clone, Debug)]
pub struct LossGradients {
    pub loss: f64,
    /// In [`GcnModel::params`] order.
    pub params: Vec<Matrix>,
    pub features: Matrix,
}

/// Weighted cross-entropy over `mask` and its gradients with respect to
/// every parameter and the feature matrix. Batch norm uses batch
/// statistics; running statistics are left alone.
pub fn loss_gradients(
    model: &GcnModel,
    op: &Matrix,
    features: &Matrix,
    labels: &[usize],
    mask: &[bool],
) -> Result<LossGradients> {
    model.check_input(op, features)?;
    let weights = ClassWeights::from_labels(labels, mask, model.n_classes)?;
    let mut tape = Tape::new();
    let params = model.leaf_params(&mut tape);
    let opv = tape.constant(op.clone());
    let xv = tape.leaf(features.clone());
    let fwd = model.forward_tape(&mut tape, &params, opv, xv, false, Mode::Train, None)?;
    let loss = weighted_ce_tape(&mut tape, fwd.logits, labels, mask, &weights)?;
    let grads = tape.backward(loss)?;
    Ok(LossGradients {
        loss: tape.value(loss).item()?,
        params: params
            .all
            .iter()
            .map(|&v| grads.get_or_zeros(v, tape.value(v)))
            .collect(),
        features: grads.get_or_zeros(xv, features),
    })
}

/// Full-batch training on the train-masked nodes of `graph`.
///
/// Leaves the model in eval mode.
pub fn train(
    model: &mut GcnModel,
    graph: &SampleGraph,
    features: &Matrix,
    labels: &[usize],
    config: &TrainConfig,
) -> Result<TrainReport> {
    fit(model, &graph.norm_operator, features, labels, &graph.masks.train, config)
}

/// Same recipe with the identity operator.
pub fn train_mlp(
    model: &mut GcnModel,
    features: &Matrix,
    labels: &[usize],
    train_mask: &[bool],
    config: &TrainConfig,
) -> Result<TrainReport> {
    fit(model, &Matrix::identity(features.rows()), features, labels, train_mask, config)
}

fn fit(
    model: &mut GcnModel,
    op: &Matrix,
    features: &Matrix,
    labels: &[usize],
    mask: &[bool],
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    model.check_input(op, features)?;
    if labels.len() != features.rows() || mask.len() != features.rows() {
        return Err(Error::contract(format!(
            "{} labels and {} mask entries for {} nodes",
            labels.len(),
            mask.len(),
            features.rows()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::contract("train mask is empty"));
    }
    let weights = ClassWeights::from_labels(labels, mask, model.n_classes)?;
    // The first layer's input never changes, so propagate it once.
    let propagated = op.matmul(features)?;
    let n = features.rows();
    let mut dropout = Rng::new(derive_seed(config.seed, DROPOUT_STREAM));
    let mut opt = AdamW::new(config.learning_rate, config.betas, config.adam_eps, config.weight_decay);
    let decay = model.decay_mask();
    let mut losses = Vec::with_capacity(config.epochs);
    model.set_mode(Mode::Train);
    for epoch in 0..config.epochs {
        let mut tape = Tape::new();
        let params = model.leaf_params(&mut tape);
        let opv = tape.constant(op.clone());
        let xv = tape.constant(propagated.clone());
        let fwd = model.forward_tape(&mut tape, &params, opv, xv, true, Mode::Train, Some(&mut dropout))?;
        let loss_var = weighted_ce_tape(&mut tape, fwd.logits, labels, mask, &weights)?;
        let loss = tape.value(loss_var).item()?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("training loss is {loss} at epoch {epoch}")));
        }
        losses.push(loss);
        let grads = tape.backward(loss_var)?;
        let g: Vec<Matrix> = params
            .all
            .iter()
            .map(|&v| grads.get_or_zeros(v, tape.value(v)))
            .collect();
        let momentum = model.config.bn_momentum;
        for (bn, (mean, var)) in model.norms.iter_mut().zip(&fwd.batch_stats) {
            bn.update(mean, var, n, momentum);
        }
        opt.step(&mut model.params_mut(), &g, &decay)?;
        if epoch % 50 == 0 {
            debug!("epoch {epoch}: loss {loss:.5}");
        }
    }
    model.set_mode(Mode::Eval);
    let logits = model.eval_trace(op, features)?.logits;
    let pred = argmax_rows(&logits);
    let idx: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    let correct = idx.iter().filter(|&&i| pred[i] == labels[i]).count();
    Ok(TrainReport {
        losses,
        train_accuracy: correct as f64 / idx.len() as f64,
    })
}
