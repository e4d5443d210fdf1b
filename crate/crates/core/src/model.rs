//! Two-stream ordinal regression scorer.
//!
//! A shared feature learner ψ (ReLU dense layers) maps each side of a pair to
//! `z`, and a linear head scores the concatenation `(z_i, z_j)`. Only one copy of
//! the feature weights exists, so both streams always read the same parameters.
//! The ablation variants reuse the same machinery with a different layer stack
//! (`Ldm`, `A2h`), a single stream (`Osnet`), or merged targets (`Bor`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{glorot_uniform, matmul, Matrix, RunRng};
use crate::pairgen::{OrdinalLabels, PairBatch, PairTargets, SingleBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Variant {
    /// Full model: one hidden layer, two streams, ternary targets.
    Prenet,
    /// Binary ordinal regression: AA and AU pairs share one target.
    Bor,
    /// One-stream network on single instances.
    Osnet,
    /// Linear direct mapping from the raw concatenated pair.
    Ldm,
    /// Two additional hidden layers.
    A2h,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Prenet,
        Variant::Bor,
        Variant::Osnet,
        Variant::Ldm,
        Variant::A2h,
    ];

    pub fn default_hidden_dims(self) -> Vec<usize> {
        match self {
            Variant::Ldm => vec![],
            Variant::A2h => vec![20, 20, 20],
            _ => vec![20],
        }
    }

    fn required_depth(self) -> usize {
        match self {
            Variant::Ldm => 0,
            Variant::A2h => 3,
            _ => 1,
        }
    }

    pub fn is_pairwise(self) -> bool {
        self != Variant::Osnet
    }

    pub fn streams(self) -> usize {
        if self.is_pairwise() {
            2
        } else {
            1
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Prenet => "PRENET",
            Variant::Bor => "BOR",
            Variant::Osnet => "OSNET",
            Variant::Ldm => "LDM",
            Variant::A2h => "A2H",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Argument(format!("unknown variant '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub l2_lambda: f64,
    pub labels: OrdinalLabels,
}

impl ModelConfig {
    pub fn new(variant: Variant, input_dim: usize) -> Self {
        ModelConfig {
            variant,
            input_dim,
            hidden_dims: variant.default_hidden_dims(),
            l2_lambda: 0.01,
            labels: OrdinalLabels::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        if self.hidden_dims.len() != self.variant.required_depth() {
            return Err(Error::Config(format!(
                "{} needs {} hidden layer(s), got {}",
                self.variant,
                self.variant.required_depth(),
                self.hidden_dims.len()
            )));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden layers must have at least one unit".into()));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(Error::Config(format!("invalid l2 lambda {}", self.l2_lambda)));
        }
        OrdinalLabels::new(self.labels.c1, self.labels.c2, self.labels.c3).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Width of ψ's output (the raw input width when there are no hidden layers).
    pub fn feature_dim(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(self.input_dim)
    }

    /// Regression targets per pair class; BOR merges both anomaly-related classes into `c2`.
    pub fn pair_targets(&self) -> PairTargets {
        match self.variant {
            Variant::Bor => PairTargets {
                aa: self.labels.c2,
                au: self.labels.c2,
                uu: self.labels.c3,
            },
            _ => self.labels.pair_targets(),
        }
    }

    /// Targets `(y_a, y_u)` for the one-stream variant.
    pub fn single_targets(&self) -> (f64, f64) {
        (self.labels.c2, self.labels.c3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `fan_in × fan_out`
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Parameters of the scorer; also used as the shape of gradients and optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PReNetParams {
    pub hidden: Vec<DenseLayer>,
    /// First `M` entries weight the left stream, the next `M` the right stream.
    pub output_weights: Vec<f64>,
    pub output_bias: f64,
}

impl PReNetParams {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let mut fan_in = cfg.input_dim;
        let hidden = cfg
            .hidden_dims
            .iter()
            .map(|&units| {
                let layer = DenseLayer {
                    weights: Matrix::zeros(fan_in, units),
                    bias: vec![0.0; units],
                };
                fan_in = units;
                layer
            })
            .collect();
        PReNetParams {
            hidden,
            output_weights: vec![0.0; cfg.variant.streams() * cfg.feature_dim()],
            output_bias: 0.0,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(cfg: &ModelConfig, rng: &mut RunRng) -> Result<Self> {
        let mut p = Self::zeros(cfg);
        for layer in &mut p.hidden {
            let (fi, fo) = layer.weights.shape();
            layer.weights = glorot_uniform(fi, fo, rng)?;
        }
        let n_out = p.output_weights.len();
        p.output_weights = glorot_uniform(n_out, 1, rng)?.into_vec();
        Ok(p)
    }

    pub fn n_params(&self) -> usize {
        self.scalars().count()
    }

    /// Every scalar in a fixed order: per layer weights then bias, output weights, output bias.
    pub fn scalars(&self) -> impl Iterator<Item = &f64> {
        self.hidden
            .iter()
            .flat_map(|l| l.weights.as_slice().iter().chain(l.bias.iter()))
            .chain(self.output_weights.iter())
            .chain(std::iter::once(&self.output_bias))
    }

    pub fn scalars_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.hidden
            .iter_mut()
            .flat_map(|l| l.weights.as_mut_slice().iter_mut().chain(l.bias.iter_mut()))
            .chain(self.output_weights.iter_mut())
            .chain(std::iter::once(&mut self.output_bias))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.scalars().copied().collect()
    }

    /// Same shape as `self`, values taken from `flat`.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.n_params() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.n_params()
            )));
        }
        let mut out = self.clone();
        for (dst, src) in out.scalars_mut().zip(flat) {
            *dst = *src;
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.scalars().all(|v| v.is_finite())
    }

    /// Sum of squared weights over all layers; biases excluded.
    pub fn l2_penalty(&self) -> f64 {
        self.hidden.iter().map(|l| l.weights.sum_squares()).sum::<f64>()
            + self.output_weights.iter().map(|w| w * w).sum::<f64>()
    }

    fn feature_dim(&self, input_dim: usize) -> usize {
        self.hidden.last().map_or(input_dim, |l| l.bias.len())
    }
}

/// Pre-activations and activations of one stream, kept for backpropagation.
struct StreamTrace {
    /// `acts[0]` is the input; `acts[l + 1] = relu(pre[l])`.
    acts: Vec<Matrix>,
    pre: Vec<Matrix>,
}

impl StreamTrace {
    fn output(&self) -> &Matrix {
        self.acts.last().expect("trace holds at least the input")
    }
}

/// Training batch for any variant.
#[derive(Debug, Clone, PartialEq)]
pub enum Batch {
    Pairs(PairBatch),
    Singles(SingleBatch),
}

impl Batch {
    pub fn len(&self) -> usize {
        match self {
            Batch::Pairs(b) => b.len(),
            Batch::Singles(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn targets(&self) -> &[f64] {
        match self {
            Batch::Pairs(b) => &b.targets,
            Batch::Singles(b) => &b.targets,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub params: PReNetParams,
}

impl Model {
    /// Glorot-initialized model for the configured variant.
    pub fn build(config: ModelConfig, rng: &mut RunRng) -> Result<Self> {
        config.validate()?;
        let params = PReNetParams::glorot(&config, rng)?;
        Ok(Model { config, params })
    }

    pub fn with_params(config: ModelConfig, params: PReNetParams) -> Result<Self> {
        config.validate()?;
        let template = PReNetParams::zeros(&config);
        let shapes_match = template.hidden.len() == params.hidden.len()
            && template
                .hidden
                .iter()
                .zip(&params.hidden)
                .all(|(t, p)| t.weights.shape() == p.weights.shape() && t.bias.len() == p.bias.len())
            && template.output_weights.len() == params.output_weights.len();
        if !shapes_match {
            return Err(Error::Shape("parameters do not match the model configuration".into()));
        }
        Ok(Model { config, params })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn n_params(&self) -> usize {
        self.params.n_params()
    }

    fn check_dim(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.config.input_dim {
            return Err(Error::Shape(format!(
                "model expects {} features, got {}",
                self.config.input_dim,
                x.cols()
            )));
        }
        Ok(())
    }

    fn trace(params: &PReNetParams, x: &Matrix) -> Result<StreamTrace> {
        let mut acts = vec![x.clone()];
        let mut pre = Vec::with_capacity(params.hidden.len());
        for layer in &params.hidden {
            let mut a = matmul(acts.last().expect("non-empty"), &layer.weights)?;
            a.add_row_broadcast(&layer.bias)?;
            acts.push(a.map(|v| v.max(0.0)));
            pre.push(a);
        }
        Ok(StreamTrace { acts, pre })
    }

    /// ψ applied to every row of `x`.
    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        self.check_dim(x)?;
        Ok(Self::trace(&self.params, x)?.acts.pop().expect("non-empty"))
    }

    /// ψ(x) for a single instance.
    pub fn feature(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.features(&Matrix::row_vector(x))?.into_vec())
    }

    /// Linear head on precomputed features. `right` is ignored by the one-stream variant.
    pub fn head(&self, left: &[f64], right: Option<&[f64]>) -> f64 {
        let m = self.params.feature_dim(self.config.input_dim);
        let w = &self.params.output_weights;
        let mut s = dot(&w[..m], left);
        if let Some(r) = right {
            s += dot(&w[m..2 * m], r);
        }
        s + self.params.output_bias
    }

    /// φ((x_i, x_j)).
    pub fn forward_pair(&self, x_i: &[f64], x_j: &[f64]) -> Result<f64> {
        if !self.variant().is_pairwise() {
            return Err(Error::Config(format!("{} does not score pairs", self.variant())));
        }
        if x_i.len() != x_j.len() {
            return Err(Error::Shape("pair members differ in dimension".into()));
        }
        let both = Matrix::from_vec(2, x_i.len(), [x_i, x_j].concat())?;
        let z = self.features(&both)?;
        Ok(self.head(z.row(0), Some(z.row(1))))
    }

    /// One-stream score of a single instance.
    pub fn forward_single(&self, x: &[f64]) -> Result<f64> {
        if self.variant().is_pairwise() {
            return Err(Error::Config(format!("{} scores pairs, not single instances", self.variant())));
        }
        let z = self.feature(x)?;
        Ok(self.head(&z, None))
    }

    fn batch_scores(&self, batch: &Batch) -> Result<(Vec<f64>, Vec<StreamTrace>)> {
        match (batch, self.variant().is_pairwise()) {
            (Batch::Pairs(b), true) => {
                self.check_dim(&b.left)?;
                self.check_dim(&b.right)?;
                let tl = Self::trace(&self.params, &b.left)?;
                let tr = Self::trace(&self.params, &b.right)?;
                let scores = (0..b.len())
                    .map(|i| self.head(tl.output().row(i), Some(tr.output().row(i))))
                    .collect();
                Ok((scores, vec![tl, tr]))
            }
            (Batch::Singles(b), false) => {
                self.check_dim(&b.features)?;
                let t = Self::trace(&self.params, &b.features)?;
                let scores = (0..b.len()).map(|i| self.head(t.output().row(i), None)).collect();
                Ok((scores, vec![t]))
            }
            _ => Err(Error::Config(format!(
                "batch kind does not match variant {}",
                self.variant()
            ))),
        }
    }

    /// Mean absolute error over the batch plus `λ·R(Θ)`.
    pub fn batch_objective(&self, batch: &Batch, l2_lambda: f64) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        let (scores, _) = self.batch_scores(batch)?;
        let mae = scores
            .iter()
            .zip(batch.targets())
            .map(|(&s, &y)| pair_loss(s, y))
            .sum::<f64>()
            / batch.len() as f64;
        Ok(mae + l2_lambda * self.params.l2_penalty())
    }

    /// Exact subgradient of [`Model::batch_objective`], with sign(0) = 0 and relu'(0) = 0.
    pub fn batch_gradients(&self, batch: &Batch, l2_lambda: f64) -> Result<PReNetParams> {
        if batch.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        let (scores, traces) = self.batch_scores(batch)?;
        let n = batch.len() as f64;
        let dscore: Vec<f64> = scores
            .iter()
            .zip(batch.targets())
            .map(|(&s, &y)| -sign(y - s) / n)
            .collect();

        let m = self.params.feature_dim(self.config.input_dim);
        let mut grads = PReNetParams::zeros(&self.config);
        grads.output_bias = dscore.iter().sum();
        for (stream, trace) in traces.iter().enumerate() {
            let w_head = &self.params.output_weights[stream * m..(stream + 1) * m];
            let z = trace.output();
            // head weights for this stream
            for (i, &g) in dscore.iter().enumerate() {
                for (gw, zv) in grads.output_weights[stream * m..(stream + 1) * m]
                    .iter_mut()
                    .zip(z.row(i))
                {
                    *gw += g * zv;
                }
            }
            // d objective / d z, then back through the ReLU layers
            let mut dz = Matrix::zeros(z.rows(), m);
            for (i, &g) in dscore.iter().enumerate() {
                for (d, w) in dz.row_mut(i).iter_mut().zip(w_head) {
                    *d = g * w;
                }
            }
            for l in (0..self.params.hidden.len()).rev() {
                let pre = &trace.pre[l];
                let mut dpre = dz;
                for (d, &p) in dpre.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                    if p <= 0.0 {
                        *d = 0.0;
                    }
                }
                let dw = matmul(&trace.acts[l].transpose(), &dpre)?;
                let layer_grad = &mut grads.hidden[l];
                for (g, v) in layer_grad.weights.as_mut_slice().iter_mut().zip(dw.as_slice()) {
                    *g += v;
                }
                for (g, v) in layer_grad.bias.iter_mut().zip(dpre.column_sums()) {
                    *g += v;
                }
                dz = matmul(&dpre, &self.params.hidden[l].weights.transpose())?;
            }
        }

        for (g, layer) in grads.hidden.iter_mut().zip(&self.params.hidden) {
            for (gv, w) in g.weights.as_mut_slice().iter_mut().zip(layer.weights.as_slice()) {
                *gv += 2.0 * l2_lambda * w;
            }
        }
        for (g, w) in grads.output_weights.iter_mut().zip(&self.params.output_weights) {
            *g += 2.0 * l2_lambda * w;
        }
        Ok(grads)
    }

    /// Distance of the nearest non-differentiable point touched by `batch`:
    /// the smallest |residual| or |pre-activation|.
    pub fn kink_margin(&self, batch: &Batch) -> Result<f64> {
        let (scores, traces) = self.batch_scores(batch)?;
        let residual = scores
            .iter()
            .zip(batch.targets())
            .map(|(s, y)| (y - s).abs())
            .fold(f64::INFINITY, f64::min);
        let pre = traces
            .iter()
            .flat_map(|t| t.pre.iter())
            .flat_map(|p| p.as_slice().iter())
            .map(|v| v.abs())
            .fold(f64::INFINITY, f64::min);
        Ok(residual.min(pre))
    }
}

/// Absolute error `|y − score|`.
pub fn pair_loss(score: f64, y: f64) -> f64 {
    (y - score).abs()
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// RMSprop without momentum; accumulators share the parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub accumulators: PReNetParams,
    pub decay_rho: f64,
    pub epsilon_stabilizer: f64,
    pub learning_rate: f64,
}

impl OptimizerState {
    pub const DEFAULT_RHO: f64 = 0.9;
    pub const DEFAULT_EPSILON: f64 = 1e-7;

    pub fn new(cfg: &ModelConfig, learning_rate: f64) -> Self {
        Self::with_constants(cfg, learning_rate, Self::DEFAULT_RHO, Self::DEFAULT_EPSILON)
    }

    pub fn with_constants(cfg: &ModelConfig, learning_rate: f64, decay_rho: f64, epsilon_stabilizer: f64) -> Self {
        OptimizerState {
            accumulators: PReNetParams::zeros(cfg),
            decay_rho,
            epsilon_stabilizer,
            learning_rate,
        }
    }
}

/// `acc ← ρ·acc + (1−ρ)·g²; θ ← θ − lr·g / (√acc + ε)`, elementwise.
pub fn rmsprop_step(params: &mut PReNetParams, grads: &PReNetParams, state: &mut OptimizerState) -> Result<()> {
    let n = params.n_params();
    if grads.n_params() != n || state.accumulators.n_params() != n {
        return Err(Error::Shape("optimizer shapes do not match parameters".into()));
    }
    if let Some(pos) = grads.scalars().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient at parameter {pos}")));
    }
    let (rho, lr, eps) = (state.decay_rho, state.learning_rate, state.epsilon_stabilizer);
    for ((p, &g), acc) in params
        .scalars_mut()
        .zip(grads.scalars())
        .zip(state.accumulators.scalars_mut())
    {
        *acc = rho * *acc + (1.0 - rho) * g * g;
        *p -= lr * g / (acc.sqrt() + eps);
    }
    if !params.is_finite() {
        return Err(Error::Numeric("parameters became non-finite".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::seeded_rng;
    use crate::pairgen::PairClass;
    use rand::Rng;

    fn tiny_config(m: usize) -> ModelConfig {
        ModelConfig {
            hidden_dims: vec![m],
            ..ModelConfig::new(Variant::Prenet, 1)
        }
    }

    fn pair_batch(left: Vec<Vec<f64>>, right: Vec<Vec<f64>>, targets: Vec<f64>) -> Batch {
        let n = targets.len();
        Batch::Pairs(PairBatch {
            left: Matrix::from_rows(&left).unwrap(),
            right: Matrix::from_rows(&right).unwrap(),
            targets,
            classes: vec![PairClass::UU; n],
            left_rows: vec![0; n],
            right_rows: vec![0; n],
        })
    }

    fn random_model(variant: Variant, d: usize, seed: u64) -> Model {
        Model::build(ModelConfig::new(variant, d), &mut seeded_rng(seed)).unwrap()
    }

    #[test]
    fn feature_hand_cases() {
        let zero = Model::with_params(ModelConfig::new(Variant::Prenet, 3), PReNetParams::zeros(&ModelConfig::new(Variant::Prenet, 3))).unwrap();
        assert!(zero.feature(&[1.0, -2.0, 3.0]).unwrap().iter().all(|&v| v == 0.0));

        let cfg = tiny_config(1);
        let mut p = PReNetParams::zeros(&cfg);
        p.hidden[0].weights = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        p.hidden[0].bias = vec![-1.0];
        let m = Model::with_params(cfg, p).unwrap();
        assert_eq!(m.feature(&[1.0]).unwrap(), vec![1.0]);
        assert_eq!(m.feature(&[0.0]).unwrap(), vec![0.0]);
        assert!(matches!(m.feature(&[0.0, 1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn feature_matches_straight_line_oracle() {
        let m = random_model(Variant::A2h, 4, 9);
        let x = [0.3, -1.2, 0.7, 2.0];
        let mut z = x.to_vec();
        for layer in &m.params.hidden {
            let (fi, fo) = layer.weights.shape();
            let mut next = vec![0.0; fo];
            for (o, out) in next.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (i, zi) in z.iter().enumerate().take(fi) {
                    acc += zi * layer.weights.get(i, o);
                }
                *out = (acc + layer.bias[o]).max(0.0);
            }
            z = next;
        }
        assert_eq!(m.feature(&x).unwrap(), z);
    }

    #[test]
    fn forward_pair_constant_networks() {
        let cfg = ModelConfig::new(Variant::Prenet, 2);
        let mut p = PReNetParams::zeros(&cfg);
        let m = Model::with_params(cfg.clone(), p.clone()).unwrap();
        assert_eq!(m.forward_pair(&[1.0, 2.0], &[-3.0, 4.0]).unwrap(), 0.0);
        p.output_bias = 4.0;
        let m = Model::with_params(cfg, p).unwrap();
        assert_eq!(m.forward_pair(&[1.0, 2.0], &[-3.0, 4.0]).unwrap(), 4.0);
    }

    #[test]
    fn stream_swap_covariance() {
        let mut rng = seeded_rng(44);
        for seed in 0..20 {
            let m = random_model(Variant::Prenet, 5, seed);
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut swapped = m.clone();
            let half = swapped.params.output_weights.len() / 2;
            swapped.params.output_weights.rotate_left(half);
            assert_eq!(m.forward_pair(&x, &y).unwrap(), swapped.forward_pair(&y, &x).unwrap());
        }
    }

    #[test]
    fn weight_sharing_is_structural() {
        let mut m = random_model(Variant::Prenet, 3, 1);
        let x = [0.5, 0.1, -0.4];
        let before = m.feature(&x).unwrap();
        let w00 = m.params.hidden[0].weights.get(0, 0);
        m.params.hidden[0].weights.set(0, 0, w00 + 0.5);
        let after = m.feature(&x).unwrap();
        // both streams call the same ψ, so the head sees the change on either side
        let half = m.params.output_weights.len() / 2;
        let mut left_only = m.clone();
        left_only.params.output_weights[half..].iter_mut().for_each(|w| *w = 0.0);
        let mut right_only = left_only.clone();
        right_only.params.output_weights.rotate_right(half);
        assert_ne!(before, after);
        assert_eq!(
            left_only.forward_pair(&x, &[0.0; 3]).unwrap(),
            right_only.forward_pair(&[0.0; 3], &x).unwrap()
        );
    }

    #[test]
    fn pair_loss_cases() {
        assert_eq!(pair_loss(6.5, 8.0), 1.5);
        assert_eq!(pair_loss(3.0, 3.0), 0.0);
        assert_eq!(pair_loss(2.0, -1.0), pair_loss(-1.0, 2.0));
    }

    #[test]
    fn objective_zero_params() {
        let cfg = ModelConfig::new(Variant::Prenet, 1);
        let m = Model::with_params(cfg.clone(), PReNetParams::zeros(&cfg)).unwrap();
        let b = pair_batch(vec![vec![1.0]; 4], vec![vec![2.0]; 4], vec![8.0, 4.0, 0.0, 0.0]);
        assert_eq!(m.batch_objective(&b, 0.01).unwrap(), 3.0);
    }

    #[test]
    fn objective_linear_in_lambda() {
        let m = random_model(Variant::Prenet, 2, 3);
        let b = pair_batch(vec![vec![1.0, 0.5]; 4], vec![vec![2.0, -1.0]; 4], vec![8.0, 4.0, 0.0, 0.0]);
        let mae = m.batch_objective(&b, 0.0).unwrap();
        let one = m.batch_objective(&b, 0.01).unwrap();
        let two = m.batch_objective(&b, 0.02).unwrap();
        let r = m.params.l2_penalty();
        assert!((one - mae - 0.01 * r).abs() < 1e-12);
        assert!((two - one - 0.01 * r).abs() < 1e-12);
        let empty = pair_batch(vec![], vec![], vec![]);
        assert!(matches!(m.batch_objective(&empty, 0.0), Err(Error::Argument(_))));
    }

    #[test]
    fn gradients_vanish_at_exact_fit() {
        let cfg = ModelConfig::new(Variant::Prenet, 2);
        let mut p = PReNetParams::zeros(&cfg);
        p.output_bias = 4.0;
        p.hidden[0].weights.set(0, 0, 0.3);
        let m = Model::with_params(cfg, p).unwrap();
        let b = pair_batch(vec![vec![1.0, 0.0]; 2], vec![vec![0.0, 1.0]; 2], vec![0.0, 0.0]);
        let targets: Vec<f64> = match &b {
            Batch::Pairs(pb) => (0..2)
                .map(|i| m.forward_pair(pb.left.row(i), pb.right.row(i)).unwrap())
                .collect(),
            _ => unreachable!(),
        };
        let b = pair_batch(vec![vec![1.0, 0.0]; 2], vec![vec![0.0, 1.0]; 2], targets);
        let g = m.batch_gradients(&b, 0.0).unwrap();
        assert!(g.scalars().all(|&v| v == 0.0));
        // with λ > 0 only the penalty remains: 2λw
        let g = m.batch_gradients(&b, 0.5).unwrap();
        assert_eq!(g.hidden[0].weights.get(0, 0), 2.0 * 0.5 * 0.3);
        assert_eq!(g.hidden[0].bias, vec![0.0; 20]);
        assert_eq!(g.output_bias, 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded_rng(100);
        for (k, variant) in Variant::ALL.into_iter().enumerate() {
            let cfg = ModelConfig::new(variant, 3);
            let m = Model::build(cfg.clone(), &mut seeded_rng(k as u64)).unwrap();
            let rows = |rng: &mut RunRng| -> Vec<Vec<f64>> {
                (0..8).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
            };
            let targets: Vec<f64> = (0..8).map(|i| [8.0, 4.0, 0.0][i % 3]).collect();
            let batch = if variant.is_pairwise() {
                pair_batch(rows(&mut rng), rows(&mut rng), targets)
            } else {
                Batch::Singles(SingleBatch {
                    features: Matrix::from_rows(&rows(&mut rng)).unwrap(),
                    targets,
                    from_anomalies: vec![true; 8],
                    rows: vec![0; 8],
                })
            };
            assert!(m.kink_margin(&batch).unwrap() > 1e-4);
            let analytic = m.batch_gradients(&batch, 0.01).unwrap().to_flat();
            let numeric = crate::ndcore::finite_diff_grad(
                |theta| {
                    let mm = Model::with_params(cfg.clone(), m.params.with_flat(theta).unwrap()).unwrap();
                    mm.batch_objective(&batch, 0.01).unwrap()
                },
                &m.params.to_flat(),
                1e-5,
            )
            .unwrap();
            for (a, n) in analytic.iter().zip(&numeric) {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
                assert!(rel < 1e-4, "{variant}: analytic {a} vs numeric {n}");
            }
        }
    }

    #[test]
    fn rmsprop_zero_gradient_decays_accumulator() {
        let cfg = ModelConfig::new(Variant::Ldm, 1);
        let mut p = PReNetParams::glorot(&cfg, &mut seeded_rng(0)).unwrap();
        let before = p.clone();
        let mut st = OptimizerState::new(&cfg, 0.001);
        st.accumulators.scalars_mut().for_each(|a| *a = 2.0);
        rmsprop_step(&mut p, &PReNetParams::zeros(&cfg), &mut st).unwrap();
        assert_eq!(p, before);
        assert!(st.accumulators.scalars().all(|&a| (a - 1.8).abs() < 1e-15));
    }

    #[test]
    fn rmsprop_first_step() {
        let cfg = ModelConfig::new(Variant::Ldm, 1);
        let mut p = PReNetParams::zeros(&cfg);
        let mut g = PReNetParams::zeros(&cfg);
        g.scalars_mut().for_each(|v| *v = 1.0);
        let mut st = OptimizerState::new(&cfg, 0.001);
        rmsprop_step(&mut p, &g, &mut st).unwrap();
        let expected = -0.001 / (0.1f64.sqrt() + 1e-7);
        assert!(p.scalars().all(|&v| (v - expected).abs() < 1e-15));
        assert!((expected + 0.003_162_3).abs() < 1e-7);
    }

    #[test]
    fn rmsprop_step_tends_to_learning_rate() {
        let cfg = ModelConfig::new(Variant::Ldm, 1);
        let mut p = PReNetParams::zeros(&cfg);
        let mut g = PReNetParams::zeros(&cfg);
        g.scalars_mut().for_each(|v| *v = -0.37);
        let mut st = OptimizerState::new(&cfg, 0.001);
        let mut last = 0.0;
        for _ in 0..300 {
            let prev = p.output_bias;
            rmsprop_step(&mut p, &g, &mut st).unwrap();
            last = p.output_bias - prev;
        }
        assert!((last - 0.001).abs() < 1e-6, "step {last}");
        assert!(st.accumulators.scalars().all(|&a| a >= 0.0));
    }

    #[test]
    fn rmsprop_rejects_non_finite() {
        let cfg = ModelConfig::new(Variant::Ldm, 1);
        let mut p = PReNetParams::zeros(&cfg);
        let mut g = PReNetParams::zeros(&cfg);
        g.output_bias = f64::NAN;
        let mut st = OptimizerState::new(&cfg, 0.001);
        assert!(matches!(rmsprop_step(&mut p, &g, &mut st), Err(Error::Numeric(_))));
    }

    #[test]
    fn variant_parameter_counts() {
        let prenet = random_model(Variant::Prenet, 21, 0);
        assert_eq!(prenet.n_params(), 21 * 20 + 20 + 40 + 1);
        assert_eq!(prenet.n_params(), 481);
        assert_eq!(random_model(Variant::Ldm, 21, 0).n_params(), 43);
        assert_eq!(random_model(Variant::Osnet, 21, 0).n_params(), 21 * 20 + 20 + 21);
        assert_eq!(
            random_model(Variant::A2h, 21, 0).n_params(),
            21 * 20 + 20 + 2 * (20 * 20 + 20) + 41
        );
    }

    #[test]
    fn variant_configuration() {
        let mut cfg = ModelConfig::new(Variant::Ldm, 4);
        cfg.hidden_dims = vec![20];
        assert!(matches!(Model::build(cfg, &mut seeded_rng(0)), Err(Error::Config(_))));
        let mut cfg = ModelConfig::new(Variant::A2h, 4);
        cfg.hidden_dims = vec![20];
        assert!(matches!(Model::build(cfg, &mut seeded_rng(0)), Err(Error::Config(_))));

        let bor = ModelConfig::new(Variant::Bor, 4).pair_targets();
        assert_eq!((bor.aa, bor.au, bor.uu), (4.0, 4.0, 0.0));
        assert_eq!(ModelConfig::new(Variant::Osnet, 4).single_targets(), (4.0, 0.0));
        assert_eq!("a2h".parse::<Variant>().unwrap(), Variant::A2h);
    }

    #[test]
    fn glorot_init_zero_biases() {
        let m = random_model(Variant::A2h, 6, 2);
        assert!(m.params.hidden.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        assert_eq!(m.params.output_bias, 0.0);
        let limit = crate::ndcore::glorot_limit(6, 20);
        assert!(m.params.hidden[0].weights.as_slice().iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn osnet_rejects_pair_batches() {
        let m = random_model(Variant::Osnet, 1, 0);
        let b = pair_batch(vec![vec![1.0]; 4], vec![vec![2.0]; 4], vec![8.0, 4.0, 0.0, 0.0]);
        assert!(matches!(m.batch_objective(&b, 0.0), Err(Error::Config(_))));
        assert!(m.forward_pair(&[1.0], &[2.0]).is_err());
        assert!(m.forward_single(&[1.0]).is_ok());
    }

    #[test]
    fn full_batch_rmsprop_halves_objective() {
        let mut rng = seeded_rng(8);
        let rows = |rng: &mut RunRng, shift: f64| -> Vec<Vec<f64>> {
            (0..16).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0) + shift).collect()).collect()
        };
        let mut left = rows(&mut rng, 2.0);
        left.truncate(8);
        left.extend(rows(&mut rng, 0.0).into_iter().take(8));
        let mut right = rows(&mut rng, 2.0);
        right.truncate(4);
        right.extend(rows(&mut rng, 0.0).into_iter().take(12));
        let targets: Vec<f64> = (0..16).map(|i| if i < 4 { 8.0 } else if i < 8 { 4.0 } else { 0.0 }).collect();
        let batch = pair_batch(left, right, targets);
        let mut m = random_model(Variant::Prenet, 4, 5);
        let start = m.batch_objective(&batch, 0.01).unwrap();
        // a larger step keeps this smoke test short
        let mut st = OptimizerState::new(&m.config, 0.01);
        for _ in 0..200 {
            let g = m.batch_gradients(&batch, 0.01).unwrap();
            rmsprop_step(&mut m.params, &g, &mut st).unwrap();
        }
        let end = m.batch_objective(&batch, 0.01).unwrap();
        assert!(end < 0.5 * start, "{start} -> {end}");
    }
}
