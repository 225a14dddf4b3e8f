//! Simulates a two-class negative-binomial cohort and writes it as CSV.
//!
//! `cargo run --example simulate_cohort -- [phi] [samples] [de_fraction]`

use rge_gcn::dataprep::save_csv;
use rge_gcn::prelude::*;
use rge_gcn::simgen::CohortManifest;

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default);
    let spec = CohortSpec::new(arg(0, 1.0), arg(1, 200.0) as usize, arg(2, 0.30), 7);
    let ds = generate(&spec)?;

    let counts = ds.values.data();
    let zeros = counts.iter().filter(|&&c| c == 0.0).count();
    let mean = counts.iter().sum::<f64>() / counts.len() as f64;
    let per_class: Vec<usize> = (0..ds.n_classes())
        .map(|k| ds.labels.iter().filter(|&&l| l == k).count())
        .collect();
    println!("{} samples x {} genes, classes {:?}", ds.n_samples(), ds.n_genes(), per_class);
    println!("mean count {mean:.1}, zero fraction {:.3}", zeros as f64 / counts.len() as f64);
    println!("{} differentially expressed genes", ds.n_gt_deg().unwrap_or(0));

    let dir = std::env::temp_dir().join("rge-gcn-simulate");
    std::fs::create_dir_all(&dir)?;
    save_csv(&ds, dir.join("counts.csv"))?;
    let manifest = CohortManifest::new(&spec, &ds);
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    println!("wrote {}", dir.display());
    Ok(())
}
