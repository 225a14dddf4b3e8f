//! Size-factor normalization, log transform, near-zero-variance filtering
//! and standardization, all fitted on training rows only.

use rge_gcn::dataprep::PreprocessOptions;
use rge_gcn::prelude::*;

fn main() -> Result<()> {
    let raw = generate(&CohortSpec::new(1.0, 120, 0.30, 11))?;
    let splits = make_splits(&raw.labels, &SplitPlan::new(11))?;
    println!(
        "splits: {} train, {} validation, {} test",
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );

    let (pre, ds) = Preprocessor::fit_transform(&raw, &splits.trainval, PreprocessOptions::default())?;
    let sf = &pre.size_factors;
    let (lo, hi) = sf.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &s| (a.min(s), b.max(s)));
    println!("size factors in [{lo:.3}, {hi:.3}]");
    println!(
        "kept {} of {} genes ({:?} -> {:?} ground-truth DE genes)",
        pre.kept_genes.len(),
        pre.n_input_genes,
        pre.gt_before_filter,
        pre.gt_after_filter
    );

    let st = Standardizer::fit(&ds.values, &splits.train)?;
    let z = st.transform(&ds.values)?;
    let train_rows = z.select_rows(&splits.train);
    let col0 = train_rows.column(0);
    let mean = col0.iter().sum::<f64>() / col0.len() as f64;
    println!("first gene after standardization: train mean {mean:.2e}");
    Ok(())
}
