//! Command-line front end.
//!
//! Every command resolves a [`RunConfig`] (defaults, then `--config` file,
//! then flags) and writes it into its output directory as
//! `run_config.json`; passing that file back through `--config` repeats the
//! run exactly.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionScores, IgConfig, Provenance};
use crate::dataprep::{load_csv, load_csv_with_labels, save_csv, PreprocessOptions, SplitPlan, DEFAULT_LABEL_COLUMN};
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, HeadKind, TrainConfig};
use crate::numcore::derive_seed;
use crate::report::{read_json, text_table, write_json, write_summary_csv, ResultRow, Summary};
use crate::rge::{
    fit_final, prepare, repeat_and_summarize, resume_rge_with, start_trace, Classifier, RepeatSummary, RgeConfig, RgeTrace,
};
use crate::simgen::{generate, CohortManifest, CohortSpec, ExpressionDataset};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "RGE_GCN_OUTPUT_ROOT";
const DEFAULT_OUTPUT_ROOT: &str = "runs";

#[derive(Debug, Parser)]
#[command(name = "rge-gcn", version, about = "Recursive gene elimination with graph convolutional networks")]
pub struct Cli {
    /// Log filter, e.g. `info` or `rge_gcn=debug`.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a negative-binomial cohort and write it as CSV plus manifest.
    Simulate(SimulateArgs),
    /// Preprocess a CSV matrix, run gene elimination and report.
    Run(RunArgs),
    /// Reproduce the 12-cohort synthetic benchmark grid.
    Benchmark(BenchmarkArgs),
    /// Sweep the minimum gene fraction on one dataset.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output directory (default: a timestamped directory under the output root).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PipelineArgs {
    /// RunConfig JSON; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `gcn` or `mlp`.
    #[arg(long)]
    pub classifier: Option<Classifier>,
    #[arg(long)]
    pub elimination_rate: Option<f64>,
    #[arg(long)]
    pub min_gene_fraction: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub ig_steps: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Skip median-of-ratios normalization of raw counts.
    #[arg(long)]
    pub no_normalize: bool,
    /// Skip the log2(x+1) transform.
    #[arg(long)]
    pub no_transform: bool,
    /// Classifier head: `affine` or `graph-conv`.
    #[arg(long, value_parser = parse_head)]
    pub head: Option<HeadKind>,
}

fn parse_head(s: &str) -> std::result::Result<HeadKind, String> {
    match s {
        "affine" => Ok(HeadKind::Affine),
        "graph-conv" => Ok(HeadKind::GraphConv),
        _ => Err(format!("unknown head '{s}' (expected affine or graph-conv)")),
    }
}

#[derive(Debug, Clone, Args)]
pub struct CohortArgs {
    /// Negative-binomial size parameter.
    #[arg(long)]
    pub phi: f64,
    #[arg(long)]
    pub samples: usize,
    /// Fraction of differentially expressed genes.
    #[arg(long)]
    pub de: f64,
    #[arg(long, default_value_t = 1000)]
    pub genes: usize,
    #[arg(long, default_value_t = 0.5)]
    pub class_balance: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub cohort: CohortArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Samples × genes CSV (first column sample id).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// `sample_id,label` sidecar instead of a label column.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub label_column: Option<String>,
    /// Simulation manifest naming the ground-truth DE genes.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Continue an interrupted single-seed trace (a `trace.json` that is
    /// rewritten after every iteration).
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    /// Comma-separated grid rows (1-12); default all.
    #[arg(long, value_delimiter = ',')]
    pub rows: Option<Vec<usize>>,
    #[arg(long)]
    pub genes: Option<usize>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Simulate instead of reading `--input`: `phi,samples,de`.
    #[arg(long, value_delimiter = ',')]
    pub cohort: Option<Vec<f64>>,
    /// Minimum gene fractions to compare.
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// Split settings; indices are drawn from `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSettings {
    pub test_fraction: f64,
    pub inner_val_fraction: f64,
    pub stratified: bool,
}

impl Default for SplitSettings {
    fn default() -> Self {
        let p = SplitPlan::new(0);
        Self {
            test_fraction: p.test_fraction,
            inner_val_fraction: p.inner_val_fraction,
            stratified: p.stratified,
        }
    }
}

/// Everything a command needs, fully resolved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub repeats: usize,
    pub input: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub label_column: String,
    pub manifest: Option<PathBuf>,
    pub cohort: Option<CohortSpec>,
    pub rows: Vec<usize>,
    pub min_gene_fractions: Vec<f64>,
    pub output_dir: Option<PathBuf>,
    pub preprocess: PreprocessOptions,
    pub split: SplitSettings,
    pub rge: RgeConfig,
    pub train: TrainConfig,
    pub ig: IgConfig,
}

impl RunConfig {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            seed: 0,
            repeats: 1,
            input: None,
            labels: None,
            label_column: DEFAULT_LABEL_COLUMN.into(),
            manifest: None,
            cohort: None,
            rows: Vec::new(),
            min_gene_fractions: Vec::new(),
            output_dir: None,
            preprocess: PreprocessOptions::default(),
            split: SplitSettings::default(),
            rge: RgeConfig::default(),
            train: TrainConfig::default(),
            ig: IgConfig::default(),
        }
    }

    pub fn split_plan(&self) -> SplitPlan {
        SplitPlan {
            test_fraction: self.split.test_fraction,
            inner_val_fraction: self.split.inner_val_fraction,
            stratified: self.split.stratified,
            ..SplitPlan::new(self.seed)
        }
    }

    /// The elimination config with the run's seed and repeat count.
    pub fn rge_config(&self) -> RgeConfig {
        RgeConfig {
            seed: self.seed,
            repeats: self.repeats,
            ..self.rge.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::config("--repeats must be at least 1"));
        }
        self.rge_config().validate()?;
        self.train.validate()?;
        self.ig.validate()?;
        if let Some(c) = &self.cohort {
            c.validate()?;
        }
        if let Some(bad) = self.rows.iter().find(|&&r| !(1..=12).contains(&r)) {
            return Err(Error::config(format!("benchmark row {bad} outside 1-12")));
        }
        Ok(())
    }

    fn apply(&mut self, p: &PipelineArgs) {
        macro_rules! set {
            ($flag:expr, $field:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        set!(p.seed, self.seed);
        set!(p.repeats, self.repeats);
        set!(p.classifier, self.rge.classifier);
        set!(p.elimination_rate, self.rge.elimination_rate);
        set!(p.min_gene_fraction, self.rge.min_gene_fraction);
        set!(p.tau, self.rge.tau);
        set!(p.head, self.rge.model.head);
        set!(p.epochs, self.train.epochs);
        set!(p.learning_rate, self.train.learning_rate);
        set!(p.weight_decay, self.train.weight_decay);
        set!(p.ig_steps, self.ig.steps);
        set!(p.test_fraction, self.split.test_fraction);
        set!(p.val_fraction, self.split.inner_val_fraction);
        if p.no_normalize {
            self.preprocess.normalize = false;
        }
        if p.no_transform {
            self.preprocess.transform = false;
        }
    }

    fn apply_input(&mut self, i: &InputArgs) {
        if i.input.is_some() {
            self.input = i.input.clone();
        }
        if i.labels.is_some() {
            self.labels = i.labels.clone();
        }
        if let Some(c) = &i.label_column {
            self.label_column = c.clone();
        }
        if i.manifest.is_some() {
            self.manifest = i.manifest.clone();
        }
    }
}

/// Defaults, then the `--config` file, then explicit flags.
fn base_config(command: &str, p: &PipelineArgs) -> Result<RunConfig> {
    let mut cfg = match &p.config {
        Some(path) => {
            let c: RunConfig = read_json(path)?;
            if c.command != command {
                return Err(Error::config(format!(
                    "{} holds a '{}' config, not '{command}'",
                    path.display(),
                    c.command
                )));
            }
            c
        }
        None => RunConfig::new(command),
    };
    cfg.apply(p);
    Ok(cfg)
}

/// Picks and prepares the output directory.
pub fn output_dir(args: &OutputArgs, command: &str) -> Result<PathBuf> {
    let dir = match &args.out {
        Some(d) => d.clone(),
        None => {
            let root = std::env::var_os(OUTPUT_ROOT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT));
            root.join(format!("{command}-{}", chrono::Local::now().format("%Y%m%d-%H%M%S")))
        }
    };
    if dir.exists() && fs::read_dir(&dir)?.next().is_some() && !args.force {
        return Err(Error::config(format!(
            "output directory {} is not empty (use --force to overwrite)",
            dir.display()
        )));
    }
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn load_input(cfg: &RunConfig) -> Result<ExpressionDataset> {
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::config("--input is required"))?;
    let mut ds = match &cfg.labels {
        Some(l) => load_csv_with_labels(input, l)?,
        None => load_csv(input, &cfg.label_column)?,
    };
    if let Some(m) = &cfg.manifest {
        let manifest: CohortManifest = serde_json::from_str(&fs::read_to_string(m)?)?;
        manifest.apply(&mut ds);
    }
    Ok(ds)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<PathBuf> {
    let c = &args.cohort;
    let spec = CohortSpec {
        n_genes: c.genes,
        class_balance: c.class_balance,
        ..CohortSpec::new(c.phi, c.samples, c.de, args.seed)
    };
    spec.validate()?;
    let mut cfg = RunConfig::new("simulate");
    cfg.seed = args.seed;
    cfg.cohort = Some(spec.clone());
    let dir = output_dir(&args.output, "simulate")?;
    cfg.output_dir = Some(dir.clone());
    let ds = generate(&spec)?;
    save_csv(&ds, dir.join("counts.csv"))?;
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&CohortManifest::new(&spec, &ds))? + "\n",
    )?;
    write_json(&cfg, dir.join("run_config.json"))?;
    info!("wrote {} samples × {} genes to {}", ds.n_samples(), ds.n_genes(), dir.display());
    Ok(dir)
}

/// Importance of the best iteration's genes.
fn best_scores(trace: &RgeTrace) -> Option<AttributionScores> {
    let rec = &trace.iterations[trace.best_iteration?];
    Some(AttributionScores {
        scores: rec.scores.clone(),
        provenance: Provenance {
            model_fingerprint: String::new(),
            steps: trace.ig.steps,
            baseline: trace.ig.baseline.clone(),
            n_targets: 0,
            genes: rec.genes.clone(),
        },
    })
}

fn row_from_trace(dataset: &str, classifier: Classifier, t: &RgeTrace) -> ResultRow {
    let m = t.final_test_metrics.as_ref();
    ResultRow {
        dataset: dataset.into(),
        method: "rge".into(),
        classifier: classifier.to_string(),
        accuracy: m.and_then(|m| Summary::of(&[m.accuracy])),
        macro_f1: m.and_then(|m| Summary::of(&[m.macro_f1])),
        positive_f1: m.and_then(|m| Summary::of(&[m.positive_f1])),
        n_selected: Summary::of(&[t.selected_genes.len() as f64]),
        n_true_degs: t.deg_recovery.and_then(|d| Summary::of(&[d.n_true as f64])),
        true_accuracy: None,
        runs: 1,
        failed_runs: 0,
    }
}

pub fn row_from_summary(dataset: &str, method: &str, classifier: Classifier, s: &RepeatSummary) -> ResultRow {
    ResultRow {
        dataset: dataset.into(),
        method: method.into(),
        classifier: classifier.to_string(),
        accuracy: s.accuracy,
        macro_f1: s.macro_f1,
        positive_f1: s.positive_f1,
        n_selected: s.n_selected,
        n_true_degs: s.n_true_degs,
        true_accuracy: s.true_accuracy,
        runs: s.seeds.len(),
        failed_runs: s.failures.len(),
    }
}

fn failed_row(dataset: &str, method: &str, classifier: Classifier, runs: usize) -> ResultRow {
    ResultRow {
        dataset: dataset.into(),
        method: method.into(),
        classifier: classifier.to_string(),
        accuracy: None,
        macro_f1: None,
        positive_f1: None,
        n_selected: None,
        n_true_degs: None,
        true_accuracy: None,
        runs,
        failed_runs: runs,
    }
}

fn write_rows(dir: &Path, rows: &[ResultRow]) -> Result<()> {
    write_summary_csv(rows, dir.join("summary.csv"))?;
    let table = text_table(rows);
    fs::write(dir.join("summary.txt"), &table)?;
    println!("{table}");
    Ok(())
}

/// Runs the full pipeline described by `cfg` and writes every artifact
/// into `dir`.
pub fn execute_run(cfg: &RunConfig, dir: &Path, resume: Option<&Path>) -> Result<()> {
    cfg.validate()?;
    let raw = load_input(cfg)?;
    let (pre, ds, splits) = prepare(&raw, &cfg.split_plan(), cfg.preprocess)?;
    write_json(&cfg, dir.join("run_config.json"))?;
    write_json(&splits, dir.join("splits.json"))?;
    write_json(&pre, dir.join("preprocessing.json"))?;
    let name = cfg
        .input
        .as_ref()
        .and_then(|p| p.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let rge = cfg.rge_config();
    if cfg.repeats > 1 {
        if resume.is_some() {
            return Err(Error::config("--resume works with a single repeat only"));
        }
        let summary = repeat_and_summarize(&ds, &splits, &rge, &cfg.train, &cfg.ig)?;
        write_json(&summary, dir.join("trace.json"))?;
        return write_rows(dir, &[row_from_summary(&name, "rge", rge.classifier, &summary)]);
    }
    let start = match resume {
        Some(p) => read_json::<RgeTrace>(p)?,
        None => start_trace(&ds, &splits, &rge, &cfg.train, &cfg.ig),
    };
    let trace_path = dir.join("trace.json");
    let trace = resume_rge_with(&ds, &splits, start, &mut |t| write_json(t, &trace_path))?;
    if let Some(s) = best_scores(&trace) {
        s.write_csv(dir.join("importance.csv"))?;
    }
    let fitted = fit_final(&ds, &trace.selected_indices, &splits, &rge, &cfg.train)?;
    let node_names: Vec<String> = splits
        .trainval
        .iter()
        .chain(&splits.test)
        .map(|&i| ds.sample_ids[i].clone())
        .collect();
    fitted.graph.write_edge_list(dir.join("edges.csv"), Some(&node_names))?;
    save_checkpoint(&fitted.model, Some(&trace.selected_genes), dir.join("model.json"))?;
    write_rows(dir, &[row_from_trace(&name, rge.classifier, &trace)])
}

pub fn cmd_run(args: &RunArgs) -> Result<PathBuf> {
    let mut cfg = base_config("run", &args.pipeline)?;
    cfg.apply_input(&args.input);
    cfg.validate()?;
    if cfg.input.is_none() {
        return Err(Error::config("--input is required"));
    }
    let dir = output_dir(&args.output, "run")?;
    cfg.output_dir = Some(dir.clone());
    execute_run(&cfg, &dir, args.resume.as_deref())?;
    Ok(dir)
}

/// `(phi, samples, de_fraction)` of benchmark row `row` (1-based), in the
/// order samples, then dispersion, then DE fraction (0.30 first).
pub fn grid_row(row: usize) -> Result<(f64, usize, f64)> {
    if !(1..=12).contains(&row) {
        return Err(Error::config(format!("benchmark row {row} outside 1-12")));
    }
    let i = row - 1;
    Ok(([1.0, 100.0][(i / 2) % 2], [50, 200, 500][i / 4], [0.30, 0.05][i % 2]))
}

pub fn cohort_label(phi: f64, n: usize, de: f64) -> String {
    format!("({phi}, {n}, {de:.2})")
}

pub fn cmd_benchmark(args: &BenchmarkArgs) -> Result<PathBuf> {
    let mut cfg = base_config("benchmark", &args.pipeline)?;
    if args.pipeline.repeats.is_none() && args.pipeline.config.is_none() {
        cfg.repeats = RgeConfig::default().repeats;
    }
    if let Some(r) = &args.rows {
        cfg.rows = r.clone();
    }
    if cfg.rows.is_empty() {
        cfg.rows = (1..=12).collect();
    }
    let genes = args.genes.or(cfg.cohort.as_ref().map(|c| c.n_genes)).unwrap_or(1000);
    cfg.cohort = Some(CohortSpec {
        n_genes: genes,
        ..CohortSpec::new(1.0, 50, 0.3, cfg.seed)
    });
    cfg.validate()?;
    let dir = output_dir(&args.output, "benchmark")?;
    cfg.output_dir = Some(dir.clone());
    write_json(&cfg, dir.join("run_config.json"))?;
    execute_benchmark(&cfg, &dir)?;
    Ok(dir)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub row: usize,
    pub cohort: CohortSpec,
    pub summary: Option<RepeatSummary>,
    pub error: Option<String>,
}

/// Runs each grid row; a failing row is recorded and the grid continues.
pub fn execute_benchmark(cfg: &RunConfig, dir: &Path) -> Result<Vec<ResultRow>> {
    let genes = cfg.cohort.as_ref().map_or(1000, |c| c.n_genes);
    let rge = cfg.rge_config();
    let mut rows = Vec::new();
    for &row in &cfg.rows {
        let (phi, n, de) = grid_row(row)?;
        let label = cohort_label(phi, n, de);
        let spec = CohortSpec {
            n_genes: genes,
            ..CohortSpec::new(phi, n, de, derive_seed(cfg.seed, row as u64))
        };
        info!("benchmark row {row} {label}");
        let outcome = generate(&spec)
            .and_then(|raw| prepare(&raw, &cfg.split_plan(), cfg.preprocess))
            .and_then(|(_, ds, splits)| repeat_and_summarize(&ds, &splits, &rge, &cfg.train, &cfg.ig));
        let (result, record) = match outcome {
            Ok(s) => (
                row_from_summary(&label, "rge", rge.classifier, &s),
                BenchmarkRow {
                    row,
                    cohort: spec,
                    summary: Some(s),
                    error: None,
                },
            ),
            Err(e @ (Error::Config(_) | Error::Io(_))) => return Err(e),
            Err(e) => {
                log::warn!("row {row} failed: {e}");
                (
                    failed_row(&label, "rge", rge.classifier, cfg.repeats),
                    BenchmarkRow {
                        row,
                        cohort: spec,
                        summary: None,
                        error: Some(e.to_string()),
                    },
                )
            }
        };
        write_json(&record, dir.join(format!("row-{row:02}.json")))?;
        rows.push(result);
    }
    write_rows(dir, &rows)?;
    Ok(rows)
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<PathBuf> {
    let mut cfg = base_config("ablate", &args.pipeline)?;
    cfg.apply_input(&args.input);
    if let Some(c) = &args.cohort {
        if c.len() != 3 {
            return Err(Error::config("--cohort expects phi,samples,de"));
        }
        cfg.cohort = Some(CohortSpec::new(c[0], c[1] as usize, c[2], cfg.seed));
    }
    if let Some(f) = &args.fractions {
        cfg.min_gene_fractions = f.clone();
    }
    if cfg.min_gene_fractions.is_empty() {
        cfg.min_gene_fractions = vec![0.05, 0.10, 0.20];
    }
    if cfg.input.is_none() && cfg.cohort.is_none() {
        return Err(Error::config("ablate needs --input or --cohort"));
    }
    cfg.validate()?;
    let dir = output_dir(&args.output, "ablate")?;
    cfg.output_dir = Some(dir.clone());
    write_json(&cfg, dir.join("run_config.json"))?;
    execute_ablation(&cfg, &dir)?;
    Ok(dir)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationArm {
    pub min_gene_fraction: f64,
    pub summary: RepeatSummary,
}

/// One repeated run per minimum gene fraction, all on the same splits.
pub fn execute_ablation(cfg: &RunConfig, dir: &Path) -> Result<Vec<ResultRow>> {
    let (raw, label) = match &cfg.cohort {
        Some(spec) if cfg.input.is_none() => (generate(spec)?, cohort_label(spec.phi, spec.n_samples, spec.de_fraction)),
        _ => (
            load_input(cfg)?,
            cfg.input
                .as_ref()
                .and_then(|p| p.file_stem())
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        ),
    };
    let (_, ds, splits) = prepare(&raw, &cfg.split_plan(), cfg.preprocess)?;
    let mut rows = Vec::new();
    let mut arms = Vec::new();
    for &f in &cfg.min_gene_fractions {
        let rge = RgeConfig {
            min_gene_fraction: f,
            ..cfg.rge_config()
        };
        let summary = repeat_and_summarize(&ds, &splits, &rge, &cfg.train, &cfg.ig)?;
        rows.push(row_from_summary(&label, &format!("rge-min{:.0}%", f * 100.0), rge.classifier, &summary));
        arms.push(AblationArm {
            min_gene_fraction: f,
            summary,
        });
    }
    #[derive(Serialize)]
    struct Ablation<'a> {
        arms: &'a [AblationArm],
    }
    write_json(&Ablation { arms: &arms }, dir.join("ablation.json"))?;
    write_rows(dir, &rows)?;
    Ok(rows)
}

pub fn dispatch(cli: &Cli) -> Result<PathBuf> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Run(a) => cmd_run(a),
        Command::Benchmark(a) => cmd_benchmark(a),
        Command::Ablate(a) => cmd_ablate(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let _ = env_logger::Builder::new().parse_filters(&cli.log_level).try_init();
    match dispatch(&cli) {
        Ok(dir) => {
            eprintln!("outputs in {}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::Baseline;

    #[test]
    fn grid_rows_follow_the_table_order() {
        assert_eq!(grid_row(1).unwrap(), (1.0, 50, 0.30));
        assert_eq!(grid_row(2).unwrap(), (1.0, 50, 0.05));
        assert_eq!(grid_row(3).unwrap(), (100.0, 50, 0.30));
        assert_eq!(grid_row(5).unwrap(), (1.0, 200, 0.30));
        assert_eq!(grid_row(9).unwrap(), (1.0, 500, 0.30));
        assert_eq!(grid_row(12).unwrap(), (100.0, 500, 0.05));
        assert!(grid_row(13).is_err());
        assert_eq!(cohort_label(1.0, 200, 0.3), "(1, 200, 0.30)");
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut file_cfg = RunConfig::new("run");
        file_cfg.seed = 9;
        file_cfg.train.epochs = 17;
        let path = dir.path().join("cfg.json");
        write_json(&file_cfg, &path).unwrap();
        let flags = PipelineArgs {
            config: Some(path.clone()),
            epochs: Some(5),
            classifier: Some(Classifier::Mlp),
            ..PipelineArgs::default()
        };
        let cfg = base_config("run", &flags).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.rge.classifier, Classifier::Mlp);
        assert!(base_config("benchmark", &flags).is_err());
    }

    #[test]
    fn output_dir_refuses_to_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x"), "1").unwrap();
        let args = OutputArgs {
            out: Some(dir.path().to_path_buf()),
            force: false,
        };
        assert!(matches!(output_dir(&args, "run"), Err(Error::Config(_))));
        let forced = OutputArgs { force: true, ..args };
        assert!(output_dir(&forced, "run").is_ok());
    }

    #[test]
    fn usage_errors_exit_nonzero() {
        assert_eq!(run_cli(["rge-gcn", "simulate", "--phi", "1"]), 2);
        assert_eq!(run_cli(["rge-gcn", "bogus"]), 2);
    }

    #[test]
    fn baseline_kind_is_recorded() {
        let cfg = RunConfig::new("run");
        assert_eq!(cfg.ig.baseline, Baseline::Zero);
        assert_eq!(cfg.rge_config().repeats, 1);
    }
}
