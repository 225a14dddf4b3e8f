//! Matrix-valued reverse-mode differentiation.
//!
//! Every operation appends a node to a [`Tape`]; a node only ever refers to
//! earlier nodes, so the insertion order is a topological order and
//! [`Tape::backward`] is a single reverse sweep.
//!
//! ```
//! use rge_gcn::numcore::{Matrix, Tape};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Matrix::row_vector(vec![-1.0, 2.0]));
//! let y = tape.relu(x);
//! let s = tape.sum(y);
//! let grads = tape.backward(s).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0]);
//! ```

use super::matrix::{gemm, Matrix, Trans};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Const,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Relu(Var),
    Scale(Var, f64),
    Offset(Var),
    Powf(Var, f64),
    ColMean(Var),
    Sum(Var),
    LogSoftmax(Var),
    /// `Σ coef · a[row, col]` over the listed entries.
    Gather(Var, Vec<(usize, usize, f64)>),
}

#[derive(Clone, Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node that needs one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` does not
    /// influence the root.
    pub fn get_or_zeros(&self, v: Var, like: &Matrix) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(like.rows(), like.cols()))
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Const, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).mul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Adds a 1×cols row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let value = self.value(a).add_row(self.value(row))?;
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(value, Op::AddRow(a, row), rg))
    }

    /// Scales every row of `a` entrywise by a 1×cols row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let value = self.value(a).mul_row(self.value(row))?;
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(value, Op::MulRow(a, row), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).relu();
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).scale(factor);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    /// Adds a scalar to every entry.
    pub fn offset(&mut self, a: Var, shift: f64) -> Var {
        let value = self.value(a).map(|v| v + shift);
        let rg = self.rg(a);
        self.push(value, Op::Offset(a), rg)
    }

    /// Entrywise power; entries must be positive unless `p` is a whole number.
    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        let value = self.value(a).map(|v| v.powf(p));
        if !value.is_finite() {
            return Err(Error::domain(format!("powf({p}) produced a non-finite value")));
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::Powf(a, p), rg))
    }

    /// Column means as a 1×cols row.
    pub fn col_mean(&mut self, a: Var) -> Var {
        let value = self.value(a).col_means();
        let rg = self.rg(a);
        self.push(value, Op::ColMean(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..x.rows() {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::LogSoftmax(a), rg)
    }

    /// Scalar `Σ coef · a[row, col]` over `picks`.
    pub fn gather(&mut self, a: Var, picks: Vec<(usize, usize, f64)>) -> Result<Var> {
        let x = self.value(a);
        let mut total = 0.0;
        for &(r, c, w) in &picks {
            if r >= x.rows() || c >= x.cols() {
                return Err(Error::Dimension {
                    op: "gather",
                    lhs: x.shape(),
                    rhs: (r, c),
                });
            }
            total += w * x.get(r, c);
        }
        let rg = self.rg(a);
        Ok(self.push(Matrix::scalar(total), Op::Gather(a, picks), rg))
    }

    /// Single entry `a[row, col]` as a scalar node.
    pub fn pick(&mut self, a: Var, row: usize, col: usize) -> Result<Var> {
        self.gather(a, vec![(row, col, 1.0)])
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.shape() != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a scalar root, got {}x{}",
                rv.rows(),
                rv.cols()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Matrix::scalar(1.0));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf | Op::Const => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        let ga = gemm(&g, Trans::No, self.value(*b), Trans::Yes)?;
                        accumulate(&mut grads, *a, ga)?;
                    }
                    if self.rg(*b) {
                        let gb = gemm(self.value(*a), Trans::Yes, &g, Trans::No)?;
                        accumulate(&mut grads, *b, gb)?;
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.clone())?;
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g)?;
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.clone())?;
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.scale(-1.0))?;
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.mul(self.value(*b))?)?;
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.mul(self.value(*a))?)?;
                    }
                }
                Op::AddRow(a, row) => {
                    if self.rg(*row) {
                        accumulate(&mut grads, *row, g.col_sums())?;
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g)?;
                    }
                }
                Op::MulRow(a, row) => {
                    if self.rg(*row) {
                        accumulate(&mut grads, *row, g.mul(self.value(*a))?.col_sums())?;
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.mul_row(self.value(*row))?)?;
                    }
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let mut ga = g;
                    for (gv, xv) in ga.data_mut().iter_mut().zip(x.data()) {
                        if *xv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Scale(a, f) => accumulate(&mut grads, *a, g.scale(*f))?,
                Op::Offset(a) => accumulate(&mut grads, *a, g)?,
                Op::Powf(a, p) => {
                    let x = self.value(*a);
                    let d = x.map(|v| p * v.powf(p - 1.0));
                    accumulate(&mut grads, *a, g.mul(&d)?)?;
                }
                Op::ColMean(a) => {
                    let x = self.value(*a);
                    let n = x.rows().max(1) as f64;
                    let row = g.scale(1.0 / n);
                    let ga = Matrix::zeros(x.rows(), x.cols()).add_row(&row)?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Sum(a) => {
                    let x = self.value(*a);
                    let gv = g.item()?;
                    accumulate(&mut grads, *a, Matrix::filled(x.rows(), x.cols(), gv))?;
                }
                Op::LogSoftmax(a) => {
                    // dx = g - softmax * rowsum(g)
                    let y = &node.value;
                    let mut ga = g.clone();
                    for r in 0..y.rows() {
                        let s: f64 = g.row(r).iter().sum();
                        for (gv, yv) in ga.row_mut(r).iter_mut().zip(y.row(r)) {
                            *gv -= yv.exp() * s;
                        }
                    }
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Gather(a, picks) => {
                    let x = self.value(*a);
                    let gv = g.item()?;
                    let mut ga = Matrix::zeros(x.rows(), x.cols());
                    for &(r, c, w) in picks {
                        let cur = ga.get(r, c);
                        ga.set(r, c, cur + gv * w);
                    }
                    accumulate(&mut grads, *a, ga)?;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    fn random(rng: &mut Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.uniform(-1.0, 1.0).unwrap())
    }

    #[test]
    fn linear_map_gradient() {
        let mut rng = Rng::new(3);
        let w = random(&mut rng, 3, 4);
        let mut tape = Tape::new();
        let wv = tape.constant(w.clone());
        let x = tape.leaf(random(&mut rng, 4, 1));
        let y = tape.matmul(wv, x).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        let want = w.transpose().matmul(&Matrix::ones(3, 1)).unwrap();
        assert!(g.get(x).unwrap().max_abs_diff(&want).unwrap() < 1e-15);
        assert!(g.get(wv).is_none());
    }

    #[test]
    fn relu_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::row_vector(vec![-1.0, 2.0]));
        let r = tape.relu(x);
        let s = tape.sum(r);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::zeros(2, 2));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn repeated_backward_is_independent() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::row_vector(vec![1.0, 2.0]));
        let y = tape.mul(x, x).unwrap();
        let s = tape.sum(y);
        let a = tape.backward(s).unwrap();
        let b = tape.backward(s).unwrap();
        assert_eq!(a.get(x).unwrap(), b.get(x).unwrap());
        assert_eq!(a.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    /// Scalar function built from every op, evaluated from plain inputs.
    fn composite(tape: &mut Tape, xs: &[Matrix], leaves: bool) -> (Vec<Var>, Var) {
        let vars: Vec<Var> = xs
            .iter()
            .map(|m| {
                if leaves {
                    tape.leaf(m.clone())
                } else {
                    tape.constant(m.clone())
                }
            })
            .collect();
        let (x, w1, w2, row, gamma) = (vars[0], vars[1], vars[2], vars[3], vars[4]);
        let h = tape.matmul(x, w1).unwrap();
        let h = tape.add_row(h, row).unwrap();
        let mean = tape.col_mean(h);
        let neg = tape.scale(mean, -1.0);
        let c = tape.add_row(h, neg).unwrap();
        let sq = tape.mul(c, c).unwrap();
        let var = tape.col_mean(sq);
        let var = tape.offset(var, 1e-5);
        let inv = tape.powf(var, -0.5).unwrap();
        let h = tape.mul_row(c, inv).unwrap();
        let h = tape.mul_row(h, gamma).unwrap();
        let h = tape.relu(h);
        let o = tape.matmul(h, w2).unwrap();
        let o2 = tape.sub(o, o).unwrap();
        let o = tape.add(o, o2).unwrap();
        let ls = tape.log_softmax(o);
        let picks = (0..xs[0].rows()).map(|r| (r, r % 3, -0.7)).collect();
        let loss = tape.gather(ls, picks).unwrap();
        (vars, loss)
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = Rng::new(17);
        let xs = vec![
            random(&mut rng, 7, 5),
            random(&mut rng, 5, 4),
            random(&mut rng, 4, 3),
            random(&mut rng, 1, 4),
            random(&mut rng, 1, 4),
        ];
        let mut tape = Tape::new();
        let (vars, loss) = composite(&mut tape, &xs, true);
        let grads = tape.backward(loss).unwrap();
        let eval = |inputs: &[Matrix]| {
            let mut t = Tape::new();
            let (_, l) = composite(&mut t, inputs, false);
            t.value(l).item().unwrap()
        };
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (k, v) in vars.iter().enumerate() {
            let g = grads.get(*v).unwrap();
            for idx in 0..xs[k].len() {
                let mut plus = xs.clone();
                plus[k].data_mut()[idx] += h;
                let mut minus = xs.clone();
                minus[k].data_mut()[idx] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let an = g.data()[idx];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-5, "max relative error {worst}");
    }
}
