use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Matrix, Tape, Var};

/// Inverse-frequency class weights, scaled so `Σ_k w_k · count_k` equals
/// the number of masked nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(pub Vec<f64>);

impl ClassWeights {
    /// Classes absent from the mask get weight 1; they never enter the loss.
    pub fn from_labels(labels: &[usize], mask: &[bool], n_classes: usize) -> Result<Self> {
        let mut counts = vec![0usize; n_classes];
        for (l, &m) in labels.iter().zip(mask) {
            if m {
                if *l >= n_classes {
                    return Err(Error::contract(format!("label {l} out of range for {n_classes} classes")));
                }
                counts[*l] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::contract("class weights need a non-empty mask"));
        }
        let present = counts.iter().filter(|&&c| c > 0).count() as f64;
        Ok(Self(
            counts
                .iter()
                .map(|&c| if c > 0 { total as f64 / (present * c as f64) } else { 1.0 })
                .collect(),
        ))
    }
}

fn picks(labels: &[usize], mask: &[bool], weights: &ClassWeights, n_classes: usize) -> Result<Vec<(usize, usize, f64)>> {
    let n_mask = mask.iter().filter(|&&m| m).count();
    if n_mask == 0 {
        return Err(Error::contract("loss over an empty mask"));
    }
    let mut out = Vec::with_capacity(n_mask);
    for (i, (&l, &m)) in labels.iter().zip(mask).enumerate() {
        if m {
            if l >= n_classes {
                return Err(Error::contract(format!("label {l} out of range for {n_classes} classes")));
            }
            out.push((i, l, -weights.0[l] / n_mask as f64));
        }
    }
    Ok(out)
}

/// Mean over masked nodes of `w[y] · (-log softmax(logits)[y])`.
pub fn weighted_ce_loss(logits: &Matrix, labels: &[usize], mask: &[bool], weights: &ClassWeights) -> Result<f64> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let loss = weighted_ce_tape(&mut tape, l, labels, mask, weights)?;
    tape.value(loss).item()
}

pub(crate) fn weighted_ce_tape(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    mask: &[bool],
    weights: &ClassWeights,
) -> Result<Var> {
    let (n, k) = tape.value(logits).shape();
    if labels.len() != n || mask.len() != n {
        return Err(Error::Dimension {
            op: "weighted_ce_loss",
            lhs: (n, k),
            rhs: (labels.len(), mask.len()),
        });
    }
    let p = picks(labels, mask, weights, k)?;
    let ls = tape.log_softmax(logits);
    tape.gather(ls, p)
}
