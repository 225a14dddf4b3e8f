//! Negative-binomial RNA-seq cohort simulation.
//!
//! Counts follow `X_ij ~ NB(mu_ij, phi)` with `mu_ij = s_j · g_i · d_i`:
//! sample depth `s_j ~ Uniform(0.2, 2.2)`, baseline expression
//! `g_i ~ Exponential(mean 25)` and, for DE genes only, a class-1 fold
//! change `d_i ~ LogNormal(0, 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    RawCounts,
    Normalized,
    Transformed,
}

/// How DE genes are perturbed in class 1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FoldChange {
    #[default]
    LogNormal,
    /// Every fold change is 1; the classes share one distribution.
    Unit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n_samples: usize,
    pub n_genes: usize,
    pub de_fraction: f64,
    pub phi: f64,
    pub seed: u64,
    #[serde(default = "default_balance")]
    pub class_balance: f64,
    #[serde(default)]
    pub fold_change: FoldChange,
}

fn default_balance() -> f64 {
    0.5
}

impl CohortSpec {
    pub fn new(phi: f64, n_samples: usize, de_fraction: f64, seed: u64) -> Self {
        Self {
            n_samples,
            n_genes: 1000,
            de_fraction,
            phi,
            seed,
            class_balance: 0.5,
            fold_change: FoldChange::LogNormal,
        }
    }

    /// Number of genes given a fold change at generation time.
    pub fn n_de(&self) -> usize {
        (self.de_fraction * self.n_genes as f64).ceil() as usize
    }

    fn n_class1(&self) -> usize {
        (self.class_balance * self.n_samples as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 4 {
            return Err(Error::config(format!(
                "a cohort needs at least 4 samples, got {}",
                self.n_samples
            )));
        }
        if self.n_genes == 0 {
            return Err(Error::config("a cohort needs at least one gene"));
        }
        if !(self.de_fraction > 0.0 && self.de_fraction < 1.0) {
            return Err(Error::config(format!(
                "de_fraction must lie in (0, 1), got {}",
                self.de_fraction
            )));
        }
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(Error::config(format!("phi must be positive, got {}", self.phi)));
        }
        let n1 = self.n_class1();
        if n1 == 0 || n1 == self.n_samples {
            return Err(Error::config(format!(
                "class_balance {} leaves a single class over {} samples",
                self.class_balance, self.n_samples
            )));
        }
        Ok(())
    }
}

/// Samples × genes expression matrix with labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpressionDataset {
    pub values: Matrix,
    pub gene_names: Vec<String>,
    pub sample_ids: Vec<String>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub gt_deg: Option<Vec<bool>>,
    pub stage: Stage,
}

impl ExpressionDataset {
    pub fn new(
        values: Matrix,
        gene_names: Vec<String>,
        sample_ids: Vec<String>,
        labels: Vec<usize>,
        stage: Stage,
    ) -> Result<Self> {
        let k = labels.iter().copied().max().map_or(0, |m| m + 1);
        let class_names = (0..k).map(|c| c.to_string()).collect();
        let ds = Self {
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

    pub fn n_samples(&self) -> usize {
        self.values.rows()
    }

    pub fn n_genes(&self) -> usize {
        self.values.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names
            .len()
            .max(self.labels.iter().copied().max().map_or(0, |m| m + 1))
    }

    pub fn validate(&self) -> Result<()> {
        let (n, g) = self.values.shape();
        if self.labels.len() != n || self.sample_ids.len() != n {
            return Err(Error::Data(format!(
                "{} rows but {} labels and {} sample ids",
                n,
                self.labels.len(),
                self.sample_ids.len()
            )));
        }
        if self.gene_names.len() != g {
            return Err(Error::Data(format!(
                "{} columns but {} gene names",
                g,
                self.gene_names.len()
            )));
        }
        if let Some(gt) = &self.gt_deg {
            if gt.len() != g {
                return Err(Error::Data(format!("{} columns but {} DE flags", g, gt.len())));
            }
        }
        if self.stage == Stage::RawCounts
            && self.values.data().iter().any(|v| *v < 0.0 || v.fract() != 0.0)
        {
            return Err(Error::Data("raw counts must be nonnegative integers".into()));
        }
        Ok(())
    }

    /// Same samples restricted to the given genes (in the given order).
    pub fn subset_genes(&self, genes: &[usize]) -> ExpressionDataset {
        ExpressionDataset {
            values: self.values.select_cols(genes),
            gene_names: genes.iter().map(|&g| self.gene_names[g].clone()).collect(),
            sample_ids: self.sample_ids.clone(),
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
            gt_deg: self
                .gt_deg
                .as_ref()
                .map(|gt| genes.iter().map(|&g| gt[g]).collect()),
            stage: self.stage,
        }
    }

    pub fn n_gt_deg(&self) -> Option<usize> {
        self.gt_deg.as_ref().map(|gt| gt.iter().filter(|&&b| b).count())
    }
}

/// Simulates one cohort. The same spec (including seed) always yields the
/// same dataset.
pub fn generate(spec: &CohortSpec) -> Result<ExpressionDataset> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let (n, g) = (spec.n_samples, spec.n_genes);

    let n1 = spec.n_class1();
    let mut labels: Vec<usize> = (0..n).map(|j| usize::from(j >= n - n1)).collect();
    rng.shuffle(&mut labels);

    let depth: Vec<f64> = (0..n)
        .map(|_| rng.uniform(0.2, 2.2))
        .collect::<Result<_>>()?;
    let baseline: Vec<f64> = (0..g)
        .map(|_| rng.exponential(25.0))
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..g).collect();
    rng.shuffle(&mut order);
    let mut gt_deg = vec![false; g];
    for &i in &order[..spec.n_de()] {
        gt_deg[i] = true;
    }
    let mut fold = vec![1.0; g];
    for i in 0..g {
        if gt_deg[i] {
            let d = rng.lognormal(0.0, 1.0)?;
            if spec.fold_change == FoldChange::LogNormal {
                fold[i] = d;
            }
        }
    }

    let mut values = Matrix::zeros(n, g);
    for j in 0..n {
        for i in 0..g {
            let d = if labels[j] == 1 { fold[i] } else { 1.0 };
            let mu = depth[j] * baseline[i] * d;
            let count = if mu > 0.0 { rng.gamma_poisson(mu, spec.phi)? } else { 0 };
            values.set(j, i, count as f64);
        }
    }

    let width = (g.max(1) as f64).log10().floor() as usize + 1;
    Ok(ExpressionDataset {
        values,
        gene_names: (0..g).map(|i| format!("gene_{i:0width$}")).collect(),
        sample_ids: (0..n).map(|j| format!("sample_{j:03}")).collect(),
        labels,
        class_names: vec!["0".into(), "1".into()],
        gt_deg: Some(gt_deg),
        stage: Stage::RawCounts,
    })
}

/// JSON manifest written next to a simulated CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub spec: CohortSpec,
    pub seed: u64,
    pub n_de: usize,
    pub gt_deg: Vec<String>,
}

impl CohortManifest {
    pub fn new(spec: &CohortSpec, ds: &ExpressionDataset) -> Self {
        let gt_deg = ds
            .gt_deg
            .as_ref()
            .map(|gt| {
                gt.iter()
                    .zip(&ds.gene_names)
                    .filter(|(b, _)| **b)
                    .map(|(_, name)| name.clone())
                    .collect()
            })
            .unwrap_or_default();
        Self {
            spec: spec.clone(),
            seed: spec.seed,
            n_de: spec.n_de(),
            gt_deg,
        }
    }

    /// Marks the manifest's DE genes on a dataset by name.
    pub fn apply(&self, ds: &mut ExpressionDataset) {
        let set: std::collections::HashSet<&str> = self.gt_deg.iter().map(String::as_str).collect();
        ds.gt_deg = Some(ds.gene_names.iter().map(|n| set.contains(n.as_str())).collect());
    }
}
