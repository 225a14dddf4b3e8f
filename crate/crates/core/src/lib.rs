//! Recursive gene elimination with graph convolutional networks.
//!
//! The pipeline turns an RNA-seq style expression matrix into a compact,
//! predictive gene signature:
//!
//! 1. [`simgen`] simulates negative-binomial cohorts with known DE genes,
//!    or [`dataprep`] ingests a CSV matrix.
//! 2. [`dataprep`] normalizes (median of ratios), log-transforms, filters
//!    near-constant genes and produces nested train/validation/test splits.
//! 3. [`graph`] links samples whose Pearson correlation reaches a threshold.
//! 4. [`model`] trains a three-layer GCN on that sample graph.
//! 5. [`attribution`] scores genes with integrated gradients.
//! 6. [`rge`] drops the weakest genes and repeats, keeping the subset with
//!    the best validation accuracy.
//! 7. [`report`] computes metrics and writes JSON/CSV/text summaries.
//!
//! [`numcore`] holds the dense matrix type, seeded random streams and the
//! reverse-mode tape that every learning step relies on.

pub mod attribution;
pub mod cli;
pub mod dataprep;
pub mod error;
pub mod graph;
pub mod model;
pub mod numcore;
pub mod report;
pub mod rge;
pub mod simgen;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::attribution::{
        aggregate_importance, integrated_gradients, AttributionScores, Baseline, IgConfig,
    };
    pub use crate::dataprep::{
        load_csv, make_splits, median_ratio_normalize, nzv_filter, save_csv, vst, Preprocessor,
        SplitPlan, Standardizer,
    };
    pub use crate::error::{Error, Result};
    pub use crate::graph::{pcc_matrix, threshold_graph, Masks, SampleGraph};
    pub use crate::model::{
        predict, train, weighted_ce_loss, ClassWeights, GcnModel, HeadKind, Mode, ModelConfig,
        TrainConfig,
    };
    pub use crate::numcore::{Matrix, Rng, Tape, Var};
    pub use crate::report::{compute_metrics, deg_recovery, MetricBundle};
    pub use crate::rge::{
        evaluate_subset, repeat_and_summarize, run_rge, Classifier, RgeConfig, RgeTrace,
    };
    pub use crate::simgen::{generate, CohortSpec, ExpressionDataset, Stage};
}
