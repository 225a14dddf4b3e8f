//! Trains the graph classifier and a feature-only MLP on the same split
//! and round-trips the GCN through a checkpoint.

use rge_gcn::model::{load_checkpoint, save_checkpoint, train_mlp};
use rge_gcn::prelude::*;
use rge_gcn::rge::prepare;

fn main() -> Result<()> {
    let raw = generate(&CohortSpec::new(100.0, 200, 0.05, 3))?;
    let (_, ds, splits) = prepare(&raw, &SplitPlan::new(3), Default::default())?;
    let x = Standardizer::fit(&ds.values, &splits.train)?.transform(&ds.values)?;
    let masks = Masks::new(ds.n_samples(), &splits.train, &splits.val, &splits.test)?;
    let graph = SampleGraph::build(&x, 0.7)?.with_masks(masks.clone())?;
    println!("graph: {} nodes, {} edges", graph.n_nodes, graph.edges.len());

    let cfg = TrainConfig::with_seed(3);
    let mut gcn = GcnModel::new(ds.n_genes(), ds.n_classes(), ModelConfig::default(), 3)?;
    let report = train(&mut gcn, &graph, &x, &ds.labels, &cfg)?;
    println!(
        "loss {:.3} -> {:.3} over {} epochs",
        report.losses[0],
        report.losses[report.losses.len() - 1],
        report.losses.len()
    );
    let pred = predict(&gcn, &graph, &x)?;
    let test_labels: Vec<usize> = splits.test.iter().map(|&i| ds.labels[i]).collect();
    let test_pred: Vec<usize> = splits.test.iter().map(|&i| pred.classes[i]).collect();
    let m = compute_metrics(&test_pred, &test_labels, ds.n_classes())?;
    println!("GCN test accuracy {:.3}, macro-F1 {:.3}", m.accuracy, m.macro_f1);

    let mut mlp = GcnModel::new(ds.n_genes(), ds.n_classes(), ModelConfig::default(), 3)?;
    let train_mask: Vec<bool> = masks.train.clone();
    train_mlp(&mut mlp, &x, &ds.labels, &train_mask, &cfg)?;
    let logits = mlp.mlp_forward(&x, Mode::Eval, None)?;
    let mlp_pred = rge_gcn::model::argmax_rows(&logits);
    let mlp_test: Vec<usize> = splits.test.iter().map(|&i| mlp_pred[i]).collect();
    let m = compute_metrics(&mlp_test, &test_labels, ds.n_classes())?;
    println!("MLP test accuracy {:.3}, macro-F1 {:.3}", m.accuracy, m.macro_f1);

    let dir = std::env::temp_dir().join("rge-gcn-train");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.json");
    save_checkpoint(&gcn, Some(&ds.gene_names), &path)?;
    let (restored, header) = load_checkpoint(&path)?;
    assert_eq!(restored.fingerprint(), gcn.fingerprint());
    println!("checkpoint {} ({} tensors) restored", path.display(), header.tensors.len());
    Ok(())
}
