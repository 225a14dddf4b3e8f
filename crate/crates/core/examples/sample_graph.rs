//! Builds the sample-similarity graph from Pearson correlations and shows
//! how its density responds to the threshold.

use rge_gcn::dataprep::PreprocessOptions;
use rge_gcn::prelude::*;

fn main() -> Result<()> {
    let raw = generate(&CohortSpec::new(100.0, 100, 0.30, 5))?;
    let all: Vec<usize> = (0..raw.n_samples()).collect();
    let (_, ds) = Preprocessor::fit_transform(&raw, &all, PreprocessOptions::default())?;
    let truth = ds.gt_deg.clone().unwrap_or_default();
    let de: Vec<usize> = (0..ds.n_genes()).filter(|&g| truth[g]).collect();

    // With every gene the correlations are dominated by noise; on the DE
    // genes alone the samples correlate strongly, within and across classes.
    for (name, genes) in [("all genes", all_genes(&ds)), ("DE genes", de)] {
        let sub = ds.values.select_cols(&genes);
        let x = Standardizer::fit(&sub, &all)?.transform(&sub)?;
        println!("{name} ({}):", genes.len());
        describe(&x, &ds.labels)?;
    }
    Ok(())
}

fn all_genes(ds: &ExpressionDataset) -> Vec<usize> {
    (0..ds.n_genes()).collect()
}

fn describe(x: &Matrix, labels: &[usize]) -> Result<()> {
    let corr = pcc_matrix(x)?;
    for tau in [0.3, 0.5, 0.7, 0.9] {
        let g = threshold_graph(&corr, tau)?;
        let isolated = (0..g.n_nodes).filter(|&i| g.degree(i) == 0).count();
        let same = g
            .edges
            .iter()
            .filter(|e| labels[e.i] == labels[e.j])
            .count();
        println!(
            "  tau {tau:.1}: {:5} edges, {:3} isolated nodes, {:5.1}% within-class",
            g.edges.len(),
            isolated,
            100.0 * same as f64 / g.edges.len().max(1) as f64
        );
    }

    let g = SampleGraph::build(x, 0.7)?;
    let hub = (0..g.n_nodes).max_by_key(|&i| g.degree(i)).unwrap_or(0);
    println!("  node {hub} has degree {}; two-hop ball holds {} nodes", g.degree(hub), g.ball(hub, 2).len());
    let op = &g.norm_operator;
    println!("  self weight of that node in the propagation operator: {:.4}", op.get(hub, hub));
    Ok(())
}
