//! Sample–sample correlation graph and its normalized propagation operator.

use std::io::Write;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{gemm, Matrix, Trans};

pub const DEFAULT_TAU: f64 = 0.7;

/// Pearson correlation between every pair of rows (samples).
///
/// Rows with zero variance get correlation 0 with every other row.
pub fn pcc_matrix(features: &Matrix) -> Result<Matrix> {
    let (n, g) = features.shape();
    if g < 2 {
        return Err(Error::contract(format!("correlation needs at least 2 genes, got {g}")));
    }
    let mut unit = features.clone();
    let mut degenerate = Vec::new();
    for r in 0..n {
        let row = unit.row_mut(r);
        let mean = row.iter().sum::<f64>() / g as f64;
        row.iter_mut().for_each(|v| *v -= mean);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        } else {
            degenerate.push(r);
        }
    }
    if !degenerate.is_empty() {
        warn!("{} samples have zero variance and get no edges", degenerate.len());
    }
    let mut corr = gemm(&unit, Trans::No, &unit, Trans::Yes)?;
    for i in 0..n {
        for j in 0..i {
            // average the two triangles so the result is exactly symmetric
            let v = (0.5 * (corr.get(i, j) + corr.get(j, i))).clamp(-1.0, 1.0);
            corr.set(i, j, v);
            corr.set(j, i, v);
        }
        corr.set(i, i, 1.0);
    }
    Ok(corr)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// Train/validation/test node masks.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Masks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl Masks {
    pub fn new(n: usize, train: &[usize], val: &[usize], test: &[usize]) -> Result<Self> {
        let mut m = Masks {
            train: vec![false; n],
            val: vec![false; n],
            test: vec![false; n],
        };
        for (mask, idx) in [(&mut m.train, train), (&mut m.val, val), (&mut m.test, test)] {
            for &i in idx {
                if i >= n {
                    return Err(Error::contract(format!("mask index {i} out of range for {n} nodes")));
                }
                mask[i] = true;
            }
        }
        if (0..n).any(|i| u8::from(m.train[i]) + u8::from(m.val[i]) + u8::from(m.test[i]) > 1) {
            return Err(Error::contract("train/val/test masks overlap"));
        }
        Ok(m)
    }

    pub fn indices(mask: &[bool]) -> Vec<usize> {
        mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleGraph {
    pub n_nodes: usize,
    pub tau: f64,
    /// Undirected edges with `i < j`.
    pub edges: Vec<Edge>,
    /// Sorted neighbor lists, self excluded.
    pub neighbors: Vec<Vec<usize>>,
    /// `D^-1/2 (A + I) D^-1/2`.
    pub norm_operator: Matrix,
    pub masks: Masks,
}

/// Links `i != j` whenever `|corr_ij| >= tau`.
pub fn threshold_graph(corr: &Matrix, tau: f64) -> Result<SampleGraph> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::config(format!("tau must lie in [0, 1], got {tau}")));
    }
    let (n, m) = corr.shape();
    if n != m {
        return Err(Error::Dimension {
            op: "threshold_graph",
            lhs: (n, m),
            rhs: (m, n),
        });
    }
    let mut edges = Vec::new();
    let mut neighbors = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            let w = corr.get(i, j);
            if w.abs() >= tau {
                edges.push(Edge { i, j, weight: w });
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
    }
    neighbors.iter_mut().for_each(|v| v.sort_unstable());
    let mut g = SampleGraph {
        n_nodes: n,
        tau,
        edges,
        neighbors,
        norm_operator: Matrix::zeros(0, 0),
        masks: Masks::default(),
    };
    g.norm_operator = normalize(&g);
    Ok(g)
}

/// Symmetric normalization of the adjacency with self-loops.
pub fn normalize(graph: &SampleGraph) -> Matrix {
    let n = graph.n_nodes;
    let inv_sqrt: Vec<f64> = graph
        .neighbors
        .iter()
        .map(|nb| 1.0 / ((nb.len() + 1) as f64).sqrt())
        .collect();
    let mut op = Matrix::zeros(n, n);
    for i in 0..n {
        op.set(i, i, inv_sqrt[i] * inv_sqrt[i]);
        for &j in &graph.neighbors[i] {
            op.set(i, j, inv_sqrt[i] * inv_sqrt[j]);
        }
    }
    op
}

impl SampleGraph {
    /// Correlation graph over the rows of `features`.
    pub fn build(features: &Matrix, tau: f64) -> Result<Self> {
        threshold_graph(&pcc_matrix(features)?, tau)
    }

    /// Edgeless graph: the operator is the identity, which turns the GCN
    /// into a plain MLP.
    pub fn isolated(n: usize) -> Self {
        SampleGraph {
            n_nodes: n,
            tau: 1.0,
            edges: Vec::new(),
            neighbors: vec![Vec::new(); n],
            norm_operator: Matrix::identity(n),
            masks: Masks::default(),
        }
    }

    pub fn with_masks(mut self, masks: Masks) -> Result<Self> {
        if masks.train.len() != self.n_nodes {
            return Err(Error::contract("mask length differs from node count"));
        }
        self.masks = masks;
        Ok(self)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    /// Nodes within `hops` steps of `start`, sorted, `start` included.
    pub fn ball(&self, start: usize, hops: usize) -> Vec<usize> {
        let mut seen = vec![false; self.n_nodes];
        seen[start] = true;
        let mut frontier = vec![start];
        for _ in 0..hops {
            let mut next = Vec::new();
            for &u in &frontier {
                for &v in &self.neighbors[u] {
                    if !seen[v] {
                        seen[v] = true;
                        next.push(v);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        Masks::indices(&seen)
    }

    /// Writes `i,j,weight` rows, optionally mapping node indices to names.
    pub fn write_edge_list(&self, path: impl AsRef<Path>, names: Option<&[String]>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "i,j,weight")?;
        for e in &self.edges {
            match names {
                Some(n) => writeln!(f, "{},{},{}", n[e.i], n[e.j], e.weight)?,
                None => writeln!(f, "{},{},{}", e.i, e.j, e.weight)?,
            }
        }
        f.flush()?;
        Ok(())
    }
}
