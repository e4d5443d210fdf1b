//! Command-line driver.
//!
//! Exit codes: 0 success, 2 usage or argument errors, 3 data/capacity/I-O errors,
//! 4 numeric failures. Machine-readable results go to files; stdout carries a
//! short human-readable summary.
//!
//! `experiment`, `ablate` and `sweep` accept `--spec FILE`: a flat `key = value`
//! file whose keys are the long flag names (`runs = 10`, `n-labeled = 60`,
//! `no-standardize = true`). Flags given on the command line win over the file.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::dataset::{
    load_csv, load_csv_optional_labels, write_csv, ColumnRef, CsvOptions, WeakSupervisionConfig,
};
use crate::engine::{score_dataset, TrainReport};
use crate::error::{Error, Result};
use crate::eval::MetricsReport;
use crate::harness::{
    generate_synthetic, prepare_run, run_ablation_suite, run_contamination_sweep, run_experiment,
    train_prepared, DataSource, ExperimentReport, ExperimentSpec, SyntheticSpec, TrainSettings,
};
use crate::model::Variant;
use crate::ndcore::seeded_rng;
use crate::pairgen::{
    expected_scores, expected_true_relation_proportions, mislabel_fraction, training_pair_space_size,
    OrdinalLabels,
};

#[derive(Debug, Parser)]
#[command(name = "prenet", version, about = "Weakly-supervised anomaly detection with pairwise ordinal regression")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a two-Gaussian labeled dataset as CSV
    Synth(SynthArgs),
    /// Train one model and write a checkpoint
    Train(TrainCmd),
    /// Score a CSV with a trained checkpoint
    Score(ScoreCmd),
    /// Compute AUC-ROC and AUC-PR from a scores CSV
    Eval(EvalCmd),
    /// Repeated split/train/score runs with aggregated metrics
    Experiment(ExperimentCmd),
    /// Run all five model variants on shared splits
    Ablate(ExperimentCmd),
    /// Repeat the experiment across contamination rates
    Sweep(SweepCmd),
    /// Print closed-form expectations for a contamination rate
    Theory(TheoryCmd),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub n_normal: usize,
    #[arg(long, default_value_t = 100)]
    pub n_anomaly: usize,
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    /// Distance between class means, in units of the (unit) class std
    #[arg(long, default_value_t = 4.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Input CSV with a header row
    #[arg(long)]
    pub data: PathBuf,
    /// Label column, by name or 0-based index
    #[arg(long, default_value = "label")]
    pub label_column: String,
    /// Label value that marks an anomaly (otherwise labels must be 0/1)
    #[arg(long)]
    pub anomaly_value: Option<String>,
    /// Column naming each anomaly's type (excluded from features)
    #[arg(long)]
    pub type_column: Option<String>,
}

impl DataArgs {
    fn csv_options(&self) -> CsvOptions {
        CsvOptions {
            label_column: ColumnRef::parse(&self.label_column),
            anomaly_value: self.anomaly_value.clone(),
            type_column: self.type_column.as_deref().map(ColumnRef::parse),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ProtocolArgs {
    /// Size of the labeled anomaly set A
    #[arg(long, default_value_t = 60)]
    pub n_labeled: usize,
    /// Anomaly fraction of the unlabeled set U
    #[arg(long, default_value_t = 0.02)]
    pub contamination: f64,
    /// Comma-separated anomaly types allowed into A and U (needs --type-column)
    #[arg(long, value_delimiter = ',')]
    pub known_types: Option<Vec<String>>,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    /// Skip z-scoring features with training statistics
    #[arg(long)]
    pub no_standardize: bool,
}

impl ProtocolArgs {
    fn weak(&self) -> WeakSupervisionConfig {
        WeakSupervisionConfig {
            n_labeled: self.n_labeled,
            contamination_rate: self.contamination,
            known_types: self.known_types.clone(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// PRENET, BOR, OSNET, LDM or A2H
    #[arg(long, default_value = "PRENET", value_parser = parse_variant)]
    pub variant: Variant,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// Mini-batches per epoch
    #[arg(long, default_value_t = 20)]
    pub batches: usize,
    #[arg(long, default_value_t = 512)]
    pub batch_size: usize,
    /// RMSprop learning rate
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    /// l2 weight penalty
    #[arg(long, default_value_t = 0.01)]
    pub lambda: f64,
    /// Partners drawn from each of A and U when scoring
    #[arg(long, default_value_t = 30)]
    pub ensemble_size: usize,
    /// Ordinal targets c1,c2,c3 for aa, au, uu pairs
    #[arg(long, default_value = "8,4,0", value_parser = parse_labels)]
    pub labels: OrdinalLabels,
    /// RMSprop decay
    #[arg(long, default_value_t = 0.9)]
    pub rho: f64,
    /// RMSprop stabilizer
    #[arg(long, default_value_t = 1e-7)]
    pub rms_eps: f64,
}

impl ModelArgs {
    fn settings(&self) -> TrainSettings {
        TrainSettings {
            n_epochs: self.epochs,
            n_batches_per_epoch: self.batches,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            l2_lambda: self.lambda,
            ensemble_size: self.ensemble_size,
            labels: self.labels,
            rmsprop_rho: self.rho,
            rmsprop_epsilon: self.rms_eps,
        }
    }
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_labels(s: &str) -> std::result::Result<OrdinalLabels, String> {
    OrdinalLabels::parse(s).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint path
    #[arg(short, long)]
    pub output: PathBuf,
    /// Training report JSON [default: <output>.report.json]
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Also write the held-out test rows (raw features) as CSV
    #[arg(long)]
    pub test_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreCmd {
    /// Checkpoint written by `train`
    #[arg(long)]
    pub model: PathBuf,
    /// CSV to score; a label column, if present, is copied to the output
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "label")]
    pub label_column: String,
    #[arg(long)]
    pub anomaly_value: Option<String>,
    #[arg(long, default_value_t = 30)]
    pub ensemble_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scores CSV: row_index,score[,true_label]
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalCmd {
    /// Scores CSV with a true_label column
    #[arg(long)]
    pub scores: PathBuf,
    /// Seed recorded in the report
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Metrics JSON
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentCmd {
    /// key = value file with flag defaults
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Independent runs; run i uses seed + i
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    /// Base seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Runs executed in parallel
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Report JSON
    #[arg(short, long)]
    pub output: PathBuf,
}

impl ExperimentCmd {
    fn spec(&self) -> ExperimentSpec {
        ExperimentSpec {
            source: DataSource::Csv {
                path: self.data.data.clone(),
                options: self.data.csv_options(),
            },
            weak: self.protocol.weak(),
            variant: self.model.variant,
            n_runs: self.runs,
            base_seed: self.seed,
            train_fraction: self.protocol.train_fraction,
            standardize: !self.protocol.no_standardize,
            train: self.model.settings(),
            jobs: self.jobs,
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepCmd {
    #[command(flatten)]
    pub experiment: ExperimentCmd,
    /// Contamination rates to sweep
    #[arg(long, value_delimiter = ',', default_value = "0,0.02,0.05,0.1")]
    pub rates: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct TheoryCmd {
    /// Anomaly contamination of U, in [0, 1)
    #[arg(long, default_value_t = 0.02)]
    pub eps: f64,
    #[arg(long, default_value = "8,4,0", value_parser = parse_labels)]
    pub labels: OrdinalLabels,
    /// Labeled anomaly count K (with --n, prints the relation space size)
    #[arg(long)]
    pub k: Option<u64>,
    /// Unlabeled count N
    #[arg(long)]
    pub n: Option<u64>,
}

/// Entry point: parses `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_spec_file(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Inserts `--key value` tokens from a `--spec` file right after the subcommand,
/// so explicit flags (parsed later) override them.
fn expand_spec_file(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut spec_path = None;
    let mut iter = args.iter().skip(2);
    while let Some(a) = iter.next() {
        let a = a.to_string_lossy();
        if a == "--spec" {
            spec_path = iter.next().map(PathBuf::from);
        } else if let Some(p) = a.strip_prefix("--spec=") {
            spec_path = Some(PathBuf::from(p));
        }
    }
    let Some(path) = spec_path else {
        return Ok(args);
    };
    let tokens = spec_file_tokens(&path)?;
    let mut out: Vec<OsString> = args[..2].to_vec();
    out.extend(tokens.into_iter().map(OsString::from));
    out.extend_from_slice(&args[2..]);
    Ok(out)
}

pub fn spec_file_tokens(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut tokens = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| Error::Argument(format!("{}:{}: expected key = value", path.display(), i + 1)))?;
        let key = key.trim_start_matches("--");
        if key == "spec" {
            return Err(Error::Argument("spec files cannot include other spec files".into()));
        }
        match key {
            "no-standardize" => match value {
                "true" => tokens.push(format!("--{key}")),
                "false" => {}
                other => {
                    return Err(Error::Argument(format!(
                        "{}:{}: '{key}' takes true/false, got '{other}'",
                        path.display(),
                        i + 1
                    )))
                }
            },
            _ => {
                tokens.push(format!("--{key}"));
                tokens.push(value.to_string());
            }
        }
    }
    Ok(tokens)
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Score(a) => cmd_score(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Experiment(a) => cmd_experiment(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Theory(a) => cmd_theory(&a, &mut std::io::stdout()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let ds = generate_synthetic(&SyntheticSpec {
        n_normal: a.n_normal,
        n_anomaly: a.n_anomaly,
        dim: a.dim,
        separation: a.separation,
        seed: a.seed,
    })?;
    write_csv(&ds, &a.output)?;
    println!("wrote {} rows ({} anomalies, {} features) to {}", ds.len(), ds.n_anomalies(), ds.dim(), a.output.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    checkpoint: String,
    variant: Variant,
    seed: u64,
    n_labeled: usize,
    n_unlabeled: usize,
    injected_anomalies: usize,
    first_epoch_objective: f64,
    final_epoch_objective: f64,
    #[serde(flatten)]
    report: &'a TrainReport,
}

fn cmd_train(a: &TrainCmd) -> Result<()> {
    let ds = load_csv(&a.data.data, &a.data.csv_options())?;
    let prepared = prepare_run(
        &ds,
        &a.protocol.weak(),
        a.protocol.train_fraction,
        !a.protocol.no_standardize,
        a.seed,
    )?;
    let (model, report) = train_prepared(&prepared, a.model.variant, &a.model.settings())?;
    let ckpt = Checkpoint::new(model, prepared.standardizer.clone(), &prepared.pools);
    ckpt.save(&a.output)?;

    let report_path = a.report.clone().unwrap_or_else(|| {
        let mut p = a.output.clone().into_os_string();
        p.push(".report.json");
        PathBuf::from(p)
    });
    write_json(
        &report_path,
        &TrainSummary {
            checkpoint: a.output.display().to_string(),
            variant: a.model.variant,
            seed: a.seed,
            n_labeled: prepared.pools.labeled_anomalies.len(),
            n_unlabeled: prepared.pools.unlabeled.len(),
            injected_anomalies: prepared.pools.injected_count(),
            first_epoch_objective: report.first_epoch_mean(),
            final_epoch_objective: report.final_epoch_mean(),
            report: &report,
        },
    )?;
    if let Some(test_out) = &a.test_out {
        write_csv(&ds.subset(&prepared.split_indices.test), test_out)?;
    }
    println!(
        "trained {} on |A|={} |U|={}: objective {:.4} -> {:.4}; checkpoint {}",
        a.model.variant,
        prepared.pools.labeled_anomalies.len(),
        prepared.pools.unlabeled.len(),
        report.first_epoch_mean(),
        report.final_epoch_mean(),
        a.output.display()
    );
    Ok(())
}

fn cmd_score(a: &ScoreCmd) -> Result<()> {
    let ckpt = Checkpoint::load(&a.model)?;
    let opts = CsvOptions {
        label_column: ColumnRef::parse(&a.label_column),
        anomaly_value: a.anomaly_value.clone(),
        type_column: None,
    };
    let (features, labels) = load_csv_optional_labels(&a.data, &opts)?;
    let x = ckpt.standardizer.transform(&features)?;
    let partners = ckpt.partner_split()?;
    let scores = score_dataset(&ckpt.model, &x, &partners, a.ensemble_size, &mut seeded_rng(a.seed))?;

    let mut w = csv::Writer::from_path(&a.output).map_err(|e| Error::io(&a.output, std::io::Error::other(e)))?;
    let io = |e: csv::Error| Error::io(&a.output, std::io::Error::other(e));
    let mut header = vec!["row_index", "score"];
    if labels.is_some() {
        header.push("true_label");
    }
    w.write_record(&header).map_err(io)?;
    for (i, s) in scores.iter().enumerate() {
        let mut rec = vec![i.to_string(), s.to_string()];
        if let Some(l) = &labels {
            rec.push(l[i].to_string());
        }
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(&a.output, e))?;
    println!("scored {} rows -> {}", scores.len(), a.output.display());
    Ok(())
}

/// Reads `row_index,score,true_label`.
pub fn read_scores_csv(path: &Path) -> Result<(Vec<f64>, Vec<u8>)> {
    let opts = CsvOptions {
        label_column: ColumnRef::Name("true_label".into()),
        anomaly_value: None,
        type_column: None,
    };
    let ds = load_csv(path, &opts)?;
    let names = ds.feature_names.clone().unwrap_or_default();
    let col = names
        .iter()
        .position(|n| n == "score")
        .ok_or_else(|| Error::Schema("scores file has no 'score' column".into()))?;
    let scores = (0..ds.len()).map(|r| ds.features.get(r, col)).collect();
    Ok((scores, ds.labels))
}

fn cmd_eval(a: &EvalCmd) -> Result<()> {
    let (scores, labels) = read_scores_csv(&a.scores)?;
    let m = MetricsReport::compute(&scores, &labels, a.seed)?;
    write_json(&a.output, &m)?;
    println!(
        "AUC-ROC {:.4}  AUC-PR {:.4}  ({} rows, {} anomalies)",
        m.auc_roc, m.auc_pr, m.n_test, m.n_anomalies
    );
    Ok(())
}

fn summary_line(r: &ExperimentReport) -> String {
    format!(
        "{:<7} eps={:<5} AUC-ROC {:.3} ± {:.3}  AUC-PR {:.3} ± {:.3}  ({} runs)",
        r.variant.name(),
        r.config.contamination,
        r.auc_roc.mean,
        r.auc_roc.std,
        r.auc_pr.mean,
        r.auc_pr.std,
        r.runs.len()
    )
}

fn cmd_experiment(a: &ExperimentCmd) -> Result<()> {
    let report = run_experiment(&a.spec())?;
    write_json(&a.output, &report)?;
    println!("{}: {}", report.dataset, summary_line(&report));
    Ok(())
}

fn cmd_ablate(a: &ExperimentCmd) -> Result<()> {
    let reports = run_ablation_suite(&a.spec())?;
    write_json(&a.output, &reports)?;
    for r in &reports {
        println!("{}", summary_line(r));
    }
    Ok(())
}

fn cmd_sweep(a: &SweepCmd) -> Result<()> {
    let reports = run_contamination_sweep(&a.experiment.spec(), &a.rates)?;
    write_json(&a.experiment.output, &reports)?;
    for r in &reports {
        println!("{}", summary_line(r));
    }
    Ok(())
}

fn num(v: f64) -> String {
    let s = format!("{v:.10}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

pub fn cmd_theory(a: &TheoryCmd, out: &mut dyn Write) -> Result<()> {
    let p = expected_true_relation_proportions(a.eps)?;
    let mis = mislabel_fraction(a.eps)?;
    let s = expected_scores(&a.labels, a.eps)?;
    let l = a.labels;
    let mut text = String::new();
    text.push_str(&format!("contamination eps: {}\n", num(a.eps)));
    text.push_str(&format!("ordinal labels (c1, c2, c3): ({}, {}, {})\n", num(l.c1), num(l.c2), num(l.c3)));
    text.push_str("expected true relation proportions per batch:\n");
    text.push_str(&format!("  anomaly-anomaly: {}\n", num(p.anomaly_anomaly)));
    text.push_str(&format!("  anomaly-normal:  {}\n", num(p.anomaly_normal)));
    text.push_str(&format!("  normal-normal:   {}\n", num(p.normal_normal)));
    text.push_str(&format!("mislabel fraction (2eps - eps^2): {}\n", num(mis)));
    text.push_str(&format!("expected score, true anomaly: {}\n", num(s.anomaly_mean)));
    text.push_str(&format!("expected score, true normal:  {}\n", num(s.normal_mean)));
    if let (Some(k), Some(n)) = (a.k, a.n) {
        text.push_str(&format!("relation space size K^3 N^3: {}\n", training_pair_space_size(k, n)));
    }
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}
