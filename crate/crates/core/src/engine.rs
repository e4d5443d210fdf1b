//! Training loop and ensemble scoring.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::WeakSupervisionSplit;
use crate::error::{Error, Result};
use crate::model::{rmsprop_step, Batch, Model, ModelConfig, OptimizerState};
use crate::ndcore::{seeded_rng, Matrix, RunRng};
use crate::pairgen::{sample_pair_batch, sample_single_batch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_epochs: usize,
    pub n_batches_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rmsprop_rho: f64,
    pub rmsprop_epsilon: f64,
    pub ensemble_size: usize,
    pub seed: u64,
    pub model: ModelConfig,
}

impl TrainConfig {
    pub fn new(model: ModelConfig, seed: u64) -> Self {
        TrainConfig {
            n_epochs: 50,
            n_batches_per_epoch: 20,
            batch_size: 512,
            learning_rate: 0.001,
            rmsprop_rho: OptimizerState::DEFAULT_RHO,
            rmsprop_epsilon: OptimizerState::DEFAULT_EPSILON,
            ensemble_size: 30,
            seed,
            model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.n_epochs == 0 || self.n_batches_per_epoch == 0 || self.ensemble_size == 0 {
            return Err(Error::Argument(
                "epochs, batches per epoch and ensemble size must be positive".into(),
            ));
        }
        let multiple = if self.model.variant.is_pairwise() { 4 } else { 2 };
        if self.batch_size == 0 || !self.batch_size.is_multiple_of(multiple) {
            return Err(Error::Argument(format!(
                "batch size {} must be a positive multiple of {multiple} for {}",
                self.batch_size, self.model.variant
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument(format!("invalid learning rate {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.rmsprop_rho) || self.rmsprop_epsilon.is_nan() || self.rmsprop_epsilon <= 0.0 {
            return Err(Error::Argument("invalid RMSprop constants".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Objective of every mini-batch, evaluated before its update step.
    pub objective_trace: Vec<f64>,
    pub n_batches_per_epoch: usize,
    pub wall_clock_seconds: f64,
    pub seed: u64,
}

impl TrainReport {
    pub fn epoch_means(&self) -> Vec<f64> {
        self.objective_trace
            .chunks(self.n_batches_per_epoch.max(1))
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }

    pub fn first_epoch_mean(&self) -> f64 {
        self.epoch_means().first().copied().unwrap_or(f64::NAN)
    }

    pub fn final_epoch_mean(&self) -> f64 {
        self.epoch_means().last().copied().unwrap_or(f64::NAN)
    }
}

fn sample_batch(split: &WeakSupervisionSplit, cfg: &TrainConfig, rng: &mut RunRng) -> Result<Batch> {
    if cfg.model.variant.is_pairwise() {
        sample_pair_batch(split, cfg.batch_size, cfg.model.pair_targets(), rng).map(Batch::Pairs)
    } else {
        let (ya, yu) = cfg.model.single_targets();
        sample_single_batch(split, cfg.batch_size, ya, yu, rng).map(Batch::Singles)
    }
}

/// Glorot init, then `n_epochs × n_batches` rounds of {stratified batch, objective, RMSprop step}.
pub fn train(split: &WeakSupervisionSplit, cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    if split.dim() != cfg.model.input_dim {
        return Err(Error::Shape(format!(
            "split has {} features, model expects {}",
            split.dim(),
            cfg.model.input_dim
        )));
    }
    let started = Instant::now();
    let mut rng = seeded_rng(cfg.seed);
    let mut model = Model::build(cfg.model.clone(), &mut rng)?;
    let mut opt = OptimizerState::with_constants(
        &cfg.model,
        cfg.learning_rate,
        cfg.rmsprop_rho,
        cfg.rmsprop_epsilon,
    );
    let lambda = cfg.model.l2_lambda;
    let mut trace = Vec::with_capacity(cfg.n_epochs * cfg.n_batches_per_epoch);
    for epoch in 0..cfg.n_epochs {
        for step in 0..cfg.n_batches_per_epoch {
            let batch = sample_batch(split, cfg, &mut rng)?;
            let objective = model.batch_objective(&batch, lambda)?;
            if !objective.is_finite() {
                return Err(Error::Numeric(format!(
                    "objective diverged at epoch {epoch}, batch {step}"
                )));
            }
            trace.push(objective);
            let grads = model.batch_gradients(&batch, lambda)?;
            rmsprop_step(&mut model.params, &grads, &mut opt).map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, batch {step}: {msg}")),
                other => other,
            })?;
        }
    }
    let report = TrainReport {
        objective_trace: trace,
        n_batches_per_epoch: cfg.n_batches_per_epoch,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        seed: cfg.seed,
    };
    Ok((model, report))
}

/// Partner draws for one test row: `E` anomalies from `A` and `E` instances from `U`,
/// given as positions within the respective pools.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partners {
    pub anomalies: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

pub fn draw_partners(split: &WeakSupervisionSplit, ensemble_size: usize, rng: &mut RunRng) -> Result<Partners> {
    let (k, n) = (split.labeled_anomalies.len(), split.unlabeled.len());
    if k == 0 || n == 0 {
        return Err(Error::Domain(format!(
            "scoring needs non-empty partner pools, got |A|={k} |U|={n}"
        )));
    }
    if ensemble_size == 0 {
        return Err(Error::Argument("ensemble size must be positive".into()));
    }
    Ok(Partners {
        anomalies: (0..ensemble_size).map(|_| rng.random_range(0..k)).collect(),
        unlabeled: (0..ensemble_size).map(|_| rng.random_range(0..n)).collect(),
    })
}

/// Partner draws for every row, made up front in row order.
pub fn draw_score_plan(
    split: &WeakSupervisionSplit,
    n_rows: usize,
    ensemble_size: usize,
    rng: &mut RunRng,
) -> Result<Vec<Partners>> {
    (0..n_rows).map(|_| draw_partners(split, ensemble_size, rng)).collect()
}

/// ψ of every pool member, computed once per scoring pass.
struct PoolFeatures {
    anomalies: Matrix,
    unlabeled: Matrix,
}

impl PoolFeatures {
    fn new(model: &Model, split: &WeakSupervisionSplit) -> Result<Self> {
        Ok(PoolFeatures {
            anomalies: model.features(&split.features.select_rows(&split.labeled_anomalies))?,
            unlabeled: model.features(&split.features.select_rows(&split.unlabeled))?,
        })
    }
}

/// `(1/2E)[Σ φ((a_i, x)) + Σ φ((x, u_j))]`; the test instance sits right of anomaly partners
/// and left of unlabeled partners. The one-stream variant averages `E` evaluations of `x`.
fn ensemble_score(model: &Model, pools: &PoolFeatures, z: &[f64], partners: &Partners) -> f64 {
    if !model.variant().is_pairwise() {
        let e = partners.anomalies.len();
        return (0..e).map(|_| model.head(z, None)).sum::<f64>() / e as f64;
    }
    let mut total = 0.0;
    for &a in &partners.anomalies {
        total += model.head(pools.anomalies.row(a), Some(z));
    }
    for &u in &partners.unlabeled {
        total += model.head(z, Some(pools.unlabeled.row(u)));
    }
    total / (partners.anomalies.len() + partners.unlabeled.len()) as f64
}

pub fn score_instance_with(
    model: &Model,
    x: &[f64],
    split: &WeakSupervisionSplit,
    partners: &Partners,
) -> Result<f64> {
    let pools = PoolFeatures::new(model, split)?;
    let z = model.feature(x)?;
    Ok(ensemble_score(model, &pools, &z, partners))
}

/// Ensemble anomaly score of one instance with freshly drawn partners.
pub fn score_instance(
    model: &Model,
    x: &[f64],
    split: &WeakSupervisionSplit,
    ensemble_size: usize,
    rng: &mut RunRng,
) -> Result<f64> {
    let partners = draw_partners(split, ensemble_size, rng)?;
    score_instance_with(model, x, split, &partners)
}

/// Scores rows of `x` against a pre-drawn plan (`plan[i]` belongs to row `i`).
pub fn score_with_plan(
    model: &Model,
    x: &Matrix,
    split: &WeakSupervisionSplit,
    plan: &[Partners],
) -> Result<Vec<f64>> {
    if plan.len() != x.rows() {
        return Err(Error::Shape(format!(
            "{} partner draws for {} rows",
            plan.len(),
            x.rows()
        )));
    }
    let pools = PoolFeatures::new(model, split)?;
    let z = model.features(x)?;
    Ok((0..x.rows())
        .map(|i| ensemble_score(model, &pools, z.row(i), &plan[i]))
        .collect())
}

/// Per-row ensemble scores; all partner draws are made before any row is scored.
pub fn score_dataset(
    model: &Model,
    x: &Matrix,
    split: &WeakSupervisionSplit,
    ensemble_size: usize,
    rng: &mut RunRng,
) -> Result<Vec<f64>> {
    let plan = draw_score_plan(split, x.rows(), ensemble_size, rng)?;
    score_with_plan(model, x, split, &plan)
}
