//! Integrated-gradients attributions for a single sample and the
//! aggregated gene importance used to rank genes.

use rge_gcn::prelude::*;
use rge_gcn::rge::{fit_final, prepare};

fn main() -> Result<()> {
    let raw = generate(&CohortSpec::new(100.0, 120, 0.05, 21))?;
    let (_, ds, splits) = prepare(&raw, &SplitPlan::new(21), Default::default())?;
    let all: Vec<usize> = (0..ds.n_genes()).collect();
    let fitted = fit_final(&ds, &all, &splits, &RgeConfig::default(), &TrainConfig::with_seed(21))?;
    println!("classifier test accuracy {:.3}", fitted.metrics.accuracy);

    let ig = IgConfig::with_steps(50);
    let node = 0;
    let class = 1;
    let attr = integrated_gradients(&fitted.model, &fitted.graph, &fitted.x, node, class, &ig)?;
    let total: f64 = attr.iter().sum();
    println!("sample {node}: attributions to class {class} sum to {total:.4}");

    let scores = aggregate_importance(&fitted.model, &fitted.graph, &fitted.x, &ig)?.with_gene_names(&ds.gene_names);
    let truth = ds.gt_deg.clone().unwrap_or_default();
    println!("top genes by importance:");
    for &g in scores.ranking().iter().take(10) {
        let de = if truth.get(g).copied().unwrap_or(false) { "DE" } else { "" };
        println!("  {:10} {:.4} {de}", ds.gene_names[g], scores.scores[g]);
    }
    let path = std::env::temp_dir().join("rge-gcn-importance.csv");
    scores.write_csv(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}
