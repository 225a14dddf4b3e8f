use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// Adam with decoupled weight decay:
/// `θ ← θ − lr · (m̂ / (√v̂ + ε) + wd · θ)`, decay only where enabled.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamW {
    pub fn new(lr: f64, (beta1, beta2): (f64, f64), eps: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix], decay: &[bool]) -> Result<()> {
        if params.len() != grads.len() || params.len() != decay.len() {
            return Err(Error::contract("parameter, gradient and decay lists differ in length"));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, p) in params.iter_mut().enumerate() {
            let g = &grads[k];
            if g.shape() != p.shape() {
                return Err(Error::Dimension {
                    op: "adamw",
                    lhs: p.shape(),
                    rhs: g.shape(),
                });
            }
            let wd = if decay[k] { self.weight_decay } else { 0.0 };
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (i, (theta, gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *theta -= self.lr * (mhat / (vhat.sqrt() + self.eps) + wd * *theta);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut opt = AdamW::new(0.1, (0.9, 0.999), 1e-8, 0.0);
        let mut p = Matrix::row_vector(vec![1.0, -2.0]);
        let g = Matrix::row_vector(vec![3.0, -0.5]);
        opt.step(&mut [&mut p], &[g], &[true]).unwrap();
        assert!((p.get(0, 0) - 0.9).abs() < 1e-7);
        assert!((p.get(0, 1) + 1.9).abs() < 1e-7);
    }

    #[test]
    fn decay_is_decoupled_and_masked() {
        let mut opt = AdamW::new(0.01, (0.9, 0.999), 1e-8, 0.1);
        let mut a = Matrix::scalar(2.0);
        let mut b = Matrix::scalar(2.0);
        let zero = Matrix::scalar(0.0);
        opt.step(&mut [&mut a, &mut b], &[zero.clone(), zero], &[true, false]).unwrap();
        assert!((a.item().unwrap() - (2.0 - 0.01 * 0.1 * 2.0)).abs() < 1e-15);
        assert_eq!(b.item().unwrap(), 2.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut opt = AdamW::new(0.05, (0.9, 0.999), 1e-8, 0.0);
        let mut p = Matrix::row_vector(vec![3.0, -4.0]);
        for _ in 0..2000 {
            let g = p.scale(2.0);
            opt.step(&mut [&mut p], &[g], &[false]).unwrap();
        }
        assert!(p.data().iter().all(|v| v.abs() < 1e-2));
    }
}
