//! Synthetic fixtures and multi-run experiment orchestration.
//!
//! Run `i` of an experiment uses seed `base_seed + i`. Every stochastic stage of
//! a run (train/test split, pool construction, training, partner draws) gets its
//! own stream derived from that seed, so the stages stay reproducible in isolation
//! and every variant sees identical data for the same run seed.

use std::path::PathBuf;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::dataset::{
    build_weak_supervision, load_csv, stratified_split_indices, CsvOptions, LabeledDataset,
    SplitIndices, Standardizer, WeakSupervisionConfig, WeakSupervisionSplit, ANOMALY,
};
use crate::engine::{score_dataset, train, TrainConfig, TrainReport};
use crate::error::{Error, Result};
use crate::eval::{aggregate_runs, AggregateReport, MetricSummary, MetricsReport};
use crate::model::{Model, ModelConfig, OptimizerState, Variant};
use crate::ndcore::{seeded_rng, Matrix};
use crate::pairgen::OrdinalLabels;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticSpec {
    pub n_normal: usize,
    pub n_anomaly: usize,
    pub dim: usize,
    /// Distance between class means in units of the shared unit std.
    pub separation: f64,
    pub seed: u64,
}

/// Two isotropic unit Gaussians: normals at the origin, anomalies at `(separation, 0, …, 0)`.
/// Normals come first in row order.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    if spec.n_normal == 0 || spec.n_anomaly == 0 || spec.dim == 0 {
        return Err(Error::Argument("synthetic counts and dimension must be positive".into()));
    }
    if !(spec.separation >= 0.0 && spec.separation.is_finite()) {
        return Err(Error::Argument(format!("invalid separation {}", spec.separation)));
    }
    let mut rng = seeded_rng(spec.seed);
    let n = spec.n_normal + spec.n_anomaly;
    let mut data = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let anomalous = i >= spec.n_normal;
        for c in 0..spec.dim {
            let noise: f64 = rng.sample(StandardNormal);
            data.push(if anomalous && c == 0 { noise + spec.separation } else { noise });
        }
        labels.push(u8::from(anomalous));
    }
    let mut ds = LabeledDataset::new(Matrix::from_vec(n, spec.dim, data)?, labels)?;
    ds.feature_names = Some((1..=spec.dim).map(|i| format!("f{i}")).collect());
    Ok(ds)
}

#[derive(Debug, Clone)]
pub enum DataSource {
    Csv { path: PathBuf, options: CsvOptions },
    Synthetic(SyntheticSpec),
    InMemory { name: String, dataset: LabeledDataset },
}

impl DataSource {
    pub fn load(&self) -> Result<LabeledDataset> {
        match self {
            DataSource::Csv { path, options } => load_csv(path, options),
            DataSource::Synthetic(spec) => generate_synthetic(spec),
            DataSource::InMemory { dataset, .. } => Ok(dataset.clone()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            DataSource::Csv { path, .. } => path
                .file_stem()
                .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned()),
            DataSource::Synthetic(s) => format!(
                "synthetic(n_normal={},n_anomaly={},dim={},separation={},seed={})",
                s.n_normal, s.n_anomaly, s.dim, s.separation, s.seed
            ),
            DataSource::InMemory { name, .. } => name.clone(),
        }
    }
}

/// Training hyperparameters shared by every run of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSettings {
    pub n_epochs: usize,
    pub n_batches_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub ensemble_size: usize,
    pub labels: OrdinalLabels,
    pub rmsprop_rho: f64,
    pub rmsprop_epsilon: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            n_epochs: 50,
            n_batches_per_epoch: 20,
            batch_size: 512,
            learning_rate: 0.001,
            l2_lambda: 0.01,
            ensemble_size: 30,
            labels: OrdinalLabels::default(),
            rmsprop_rho: OptimizerState::DEFAULT_RHO,
            rmsprop_epsilon: OptimizerState::DEFAULT_EPSILON,
        }
    }
}

impl TrainSettings {
    pub fn to_config(&self, variant: Variant, input_dim: usize, seed: u64) -> TrainConfig {
        let model = ModelConfig {
            l2_lambda: self.l2_lambda,
            labels: self.labels,
            ..ModelConfig::new(variant, input_dim)
        };
        TrainConfig {
            n_epochs: self.n_epochs,
            n_batches_per_epoch: self.n_batches_per_epoch,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            rmsprop_rho: self.rmsprop_rho,
            rmsprop_epsilon: self.rmsprop_epsilon,
            ensemble_size: self.ensemble_size,
            seed,
            model,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub source: DataSource,
    pub weak: WeakSupervisionConfig,
    pub variant: Variant,
    pub n_runs: usize,
    pub base_seed: u64,
    pub train_fraction: f64,
    pub standardize: bool,
    pub train: TrainSettings,
    /// Worker threads for independent runs.
    pub jobs: usize,
}

impl ExperimentSpec {
    pub fn new(source: DataSource) -> Self {
        ExperimentSpec {
            source,
            weak: WeakSupervisionConfig::default(),
            variant: Variant::Prenet,
            n_runs: 10,
            base_seed: 0,
            train_fraction: 0.8,
            standardize: true,
            train: TrainSettings::default(),
            jobs: 1,
        }
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        self.base_seed.wrapping_add(run as u64)
    }
}

/// Stage streams derived from a run seed.
#[derive(Debug, Clone, Copy)]
enum Stage {
    Split = 1,
    Pools = 2,
    Train = 3,
    Score = 4,
}

fn stage_seed(run_seed: u64, stage: Stage) -> u64 {
    // splitmix64 finalizer over (seed, stage)
    let mut z = run_seed ^ (stage as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Data of one run, ready for training: pools (standardized) and the held-out test set.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub seed: u64,
    pub split_indices: SplitIndices,
    pub pools: WeakSupervisionSplit,
    pub standardizer: Standardizer,
    pub test_features: Matrix,
    pub test_labels: Vec<u8>,
}

pub fn prepare_run(
    dataset: &LabeledDataset,
    weak: &WeakSupervisionConfig,
    train_fraction: f64,
    standardize: bool,
    run_seed: u64,
) -> Result<PreparedRun> {
    let mut split_rng = seeded_rng(stage_seed(run_seed, Stage::Split));
    let split_indices = stratified_split_indices(dataset, train_fraction, &mut split_rng)?;
    let train_part = dataset.subset(&split_indices.train);
    let test_part = dataset.subset(&split_indices.test);
    let mut pools = build_weak_supervision(&train_part, weak, stage_seed(run_seed, Stage::Pools))?;
    let standardizer = if standardize {
        Standardizer::fit_rows(&pools.features, &pools.used_rows())
    } else {
        Standardizer::identity(dataset.dim())
    };
    pools.features = standardizer.transform(&pools.features)?;
    Ok(PreparedRun {
        seed: run_seed,
        split_indices,
        pools,
        test_features: standardizer.transform(&test_part.features)?,
        standardizer,
        test_labels: test_part.labels,
    })
}

/// Per-run numbers beyond the ranking metrics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunDiagnostics {
    pub seed: u64,
    pub auc_roc: f64,
    pub auc_pr: f64,
    pub n_test: usize,
    pub n_anomalies: usize,
    pub mean_anomaly_score: f64,
    pub mean_normal_score: f64,
    pub first_epoch_objective: f64,
    pub final_epoch_objective: f64,
}

pub struct RunOutcome {
    pub metrics: MetricsReport,
    pub diagnostics: RunDiagnostics,
    pub model: Model,
    pub train_report: TrainReport,
    pub scores: Vec<f64>,
}

/// Trains on the prepared pools with the run's training stream.
pub fn train_prepared(prepared: &PreparedRun, variant: Variant, settings: &TrainSettings) -> Result<(Model, TrainReport)> {
    let cfg = settings.to_config(variant, prepared.pools.dim(), stage_seed(prepared.seed, Stage::Train));
    train(&prepared.pools, &cfg)
}

/// Trains on the prepared pools, scores the test rows, and only then reads test labels.
pub fn execute_run(prepared: &PreparedRun, variant: Variant, settings: &TrainSettings) -> Result<RunOutcome> {
    let (model, train_report) = train_prepared(prepared, variant, settings)?;
    let mut score_rng = seeded_rng(stage_seed(prepared.seed, Stage::Score));
    let scores = score_dataset(
        &model,
        &prepared.test_features,
        &prepared.pools,
        settings.ensemble_size,
        &mut score_rng,
    )?;

    let labels = &prepared.test_labels;
    let metrics = MetricsReport::compute(&scores, labels, prepared.seed)?;
    let class_mean = |want: u8| {
        let v: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(_, &l)| (l == ANOMALY) == (want == ANOMALY))
            .map(|(&s, _)| s)
            .collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    };
    let diagnostics = RunDiagnostics {
        seed: prepared.seed,
        auc_roc: metrics.auc_roc,
        auc_pr: metrics.auc_pr,
        n_test: metrics.n_test,
        n_anomalies: metrics.n_anomalies,
        mean_anomaly_score: class_mean(ANOMALY),
        mean_normal_score: class_mean(0),
        first_epoch_objective: train_report.first_epoch_mean(),
        final_epoch_objective: train_report.final_epoch_mean(),
    };
    Ok(RunOutcome {
        metrics,
        diagnostics,
        model,
        train_report,
        scores,
    })
}

/// Settings echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportConfig {
    pub n_labeled: usize,
    pub contamination: f64,
    pub known_types: Option<Vec<String>>,
    pub n_runs: usize,
    pub base_seed: u64,
    pub train_fraction: f64,
    pub standardize: bool,
    pub train: TrainSettings,
}

/// Multi-run result: `{variant, dataset, seeds, auc_roc, auc_pr, config, runs}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub variant: Variant,
    pub dataset: String,
    pub seeds: Vec<u64>,
    pub auc_roc: MetricSummary,
    pub auc_pr: MetricSummary,
    pub config: ReportConfig,
    pub runs: Vec<RunDiagnostics>,
}

impl ExperimentReport {
    pub fn aggregate(&self) -> Result<AggregateReport> {
        let runs: Vec<MetricsReport> = self
            .runs
            .iter()
            .map(|r| MetricsReport {
                auc_roc: r.auc_roc,
                auc_pr: r.auc_pr,
                n_test: r.n_test,
                n_anomalies: r.n_anomalies,
                seed: r.seed,
            })
            .collect();
        aggregate_runs(&runs)
    }

    pub fn mean_score_gap(&self) -> f64 {
        self.runs
            .iter()
            .map(|r| r.mean_anomaly_score - r.mean_normal_score)
            .sum::<f64>()
            / self.runs.len() as f64
    }
}

fn run_all(dataset: &LabeledDataset, spec: &ExperimentSpec, variant: Variant) -> Result<Vec<RunDiagnostics>> {
    if spec.n_runs == 0 {
        return Err(Error::Argument("an experiment needs at least one run".into()));
    }
    let one = |run: usize| -> Result<RunDiagnostics> {
        let prepared = prepare_run(dataset, &spec.weak, spec.train_fraction, spec.standardize, spec.run_seed(run))?;
        Ok(execute_run(&prepared, variant, &spec.train)?.diagnostics)
    };
    let jobs = spec.jobs.clamp(1, spec.n_runs);
    let results: Vec<Result<RunDiagnostics>> = if jobs == 1 {
        (0..spec.n_runs).map(one).collect()
    } else {
        let mut slots: Vec<Option<Result<RunDiagnostics>>> = (0..spec.n_runs).map(|_| None).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..jobs)
                .map(|w| {
                    let one = &one;
                    scope.spawn(move || {
                        (w..spec.n_runs)
                            .step_by(jobs)
                            .map(|run| (run, one(run)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (run, r) in h.join().expect("experiment worker panicked") {
                    slots[run] = Some(r);
                }
            }
        });
        slots.into_iter().map(|s| s.expect("every run assigned")).collect()
    };
    results
        .into_iter()
        .enumerate()
        .map(|(run, r)| r.map_err(|e| Error::Run { run, source: Box::new(e) }))
        .collect()
}

fn report(dataset_name: String, spec: &ExperimentSpec, variant: Variant, runs: Vec<RunDiagnostics>) -> Result<ExperimentReport> {
    Ok(ExperimentReport {
        variant,
        dataset: dataset_name,
        seeds: (0..spec.n_runs).map(|i| spec.run_seed(i)).collect(),
        auc_roc: MetricSummary::from_values(runs.iter().map(|r| r.auc_roc).collect())?,
        auc_pr: MetricSummary::from_values(runs.iter().map(|r| r.auc_pr).collect())?,
        config: ReportConfig {
            n_labeled: spec.weak.n_labeled,
            contamination: spec.weak.contamination_rate,
            known_types: spec.weak.known_types.clone(),
            n_runs: spec.n_runs,
            base_seed: spec.base_seed,
            train_fraction: spec.train_fraction,
            standardize: spec.standardize,
            train: spec.train.clone(),
        },
        runs,
    })
}

/// Split → pools → standardize → train → score → metrics, for every run seed.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let dataset = spec.source.load()?;
    let runs = run_all(&dataset, spec, spec.variant)?;
    report(spec.source.name(), spec, spec.variant, runs)
}

/// All five variants on identical per-run splits.
pub fn run_ablation_suite(spec: &ExperimentSpec) -> Result<Vec<ExperimentReport>> {
    let dataset = spec.source.load()?;
    Variant::ALL
        .into_iter()
        .map(|v| report(spec.source.name(), spec, v, run_all(&dataset, spec, v)?))
        .collect()
}

/// One experiment per contamination rate, sharing run seeds (and so the train/test split).
pub fn run_contamination_sweep(spec: &ExperimentSpec, rates: &[f64]) -> Result<Vec<ExperimentReport>> {
    if rates.is_empty() {
        return Err(Error::Argument("no contamination rates given".into()));
    }
    let dataset = spec.source.load()?;
    rates
        .iter()
        .map(|&rate| {
            let mut s = spec.clone();
            s.weak.contamination_rate = rate;
            report(spec.source.name(), &s, s.variant, run_all(&dataset, &s, s.variant)?)
        })
        .collect()
}
