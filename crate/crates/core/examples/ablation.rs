//! Compares minimum gene fractions, with the MLP as a graph-free control.

use rge_gcn::cli::row_from_summary;
use rge_gcn::prelude::*;
use rge_gcn::report::text_table;
use rge_gcn::rge::prepare;

fn main() -> Result<()> {
    let raw = generate(&CohortSpec::new(100.0, 100, 0.05, 4))?;
    let (_, ds, splits) = prepare(&raw, &SplitPlan::new(4), Default::default())?;
    let train = TrainConfig::with_seed(4);
    let ig = IgConfig::with_steps(20);
    let mut rows = Vec::new();
    for classifier in [Classifier::Gcn, Classifier::Mlp] {
        for fraction in [0.05, 0.10, 0.20] {
            let rge = RgeConfig {
                min_gene_fraction: fraction,
                repeats: 2,
                classifier,
                ..RgeConfig::with_seed(4)
            };
            let s = repeat_and_summarize(&ds, &splits, &rge, &train, &ig)?;
            rows.push(row_from_summary("(100, 100, 0.05)", &format!("min {:.0}%", fraction * 100.0), classifier, &s));
        }
    }
    println!("{}", text_table(&rows));
    Ok(())
}
