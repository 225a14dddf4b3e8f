//! A reduced version of the synthetic benchmark: a few grid rows with
//! several seeds each, summarized as mean ± std.
//!
//! `cargo run --release --example benchmark_grid -- 1,2 3`

use rge_gcn::cli::{execute_benchmark, RunConfig};
use rge_gcn::prelude::*;

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = RunConfig::new("benchmark");
    cfg.rows = args
        .first()
        .map(|s| s.split(',').filter_map(|r| r.parse().ok()).collect())
        .unwrap_or_else(|| vec![1, 2]);
    cfg.repeats = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    cfg.cohort = Some(CohortSpec::new(1.0, 50, 0.3, 0));
    let dir = std::env::temp_dir().join("rge-gcn-benchmark");
    std::fs::create_dir_all(&dir)?;
    let rows = execute_benchmark(&cfg, &dir)?;
    println!("{} rows written to {}", rows.len(), dir.display());
    Ok(())
}
