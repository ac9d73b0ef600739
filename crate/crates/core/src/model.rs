//! Linear classifier, its losses and gradients, and the Adam optimizer.
//!
//! A binary task (`n_y <= 2`) uses one weight row and a sigmoid; larger label
//! alphabets use one row per class and a softmax.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;

/// Probabilities are clamped to `[PROB_CLIP, 1 - PROB_CLIP]` inside the log.
pub const PROB_CLIP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("the zero-one loss has no gradient; train with cross-entropy")]
    NotDifferentiable,
    #[error("cannot compute a gradient over an empty batch")]
    EmptyBatch,
    #[error("shape mismatch for {what}: got {got}, expected {expected}")]
    ShapeMismatch { what: &'static str, got: usize, expected: usize },
    #[error("checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot access {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Loss used either to train (cross-entropy) or to score (zero-one).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    #[default]
    CrossEntropy,
    /// Evaluation only.
    ZeroOne,
}

/// Weights and biases of a linear classifier over `k` features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Checkpoint", try_from = "Checkpoint")]
pub struct ModelParams {
    k: usize,
    n_y: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// Gradients share the parameter layout.
pub type Gradient = ModelParams;

impl ModelParams {
    pub fn zeros(k: usize, n_y: usize) -> Self {
        let rows = Self::rows_for(n_y);
        Self { k, n_y, weights: vec![0.0; rows * k], bias: vec![0.0; rows] }
    }

    /// Binary classifier `sigmoid(w·x + b)`.
    pub fn binary(weights: Vec<f64>, bias: f64) -> Self {
        Self { k: weights.len(), n_y: 2, weights, bias: vec![bias] }
    }

    /// Softmax classifier with one row of `weights` per class.
    pub fn multiclass(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self, ModelError> {
        let n_y = weights.len();
        let k = weights.first().map_or(0, Vec::len);
        if bias.len() != n_y {
            return Err(ModelError::ShapeMismatch { what: "bias", got: bias.len(), expected: n_y });
        }
        if let Some(row) = weights.iter().find(|r| r.len() != k) {
            return Err(ModelError::ShapeMismatch { what: "weight row", got: row.len(), expected: k });
        }
        if n_y <= 2 {
            return Err(ModelError::ShapeMismatch { what: "softmax classes", got: n_y, expected: 3 });
        }
        Ok(Self { k, n_y, weights: weights.concat(), bias })
    }

    fn rows_for(n_y: usize) -> usize {
        if n_y <= 2 {
            1
        } else {
            n_y
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn is_binary(&self) -> bool {
        self.n_y <= 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Number of scalar parameters.
    pub fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Weights then biases.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(&mut self.bias)
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.k == other.k && self.weights.len() == other.weights.len() && self.bias.len() == other.bias.len()
    }

    fn logit(&self, row: usize, x: &[f64]) -> f64 {
        let w = &self.weights[row * self.k..(row + 1) * self.k];
        w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.bias[row]
    }

    /// `Pr(y = 1 | x)` for a binary model; the class-1 softmax output otherwise.
    pub fn positive_proba(&self, x: &[f64]) -> f64 {
        if self.is_binary() {
            sigmoid(self.logit(0, x))
        } else {
            self.predict_proba(x)[1]
        }
    }

    /// Class distribution over `max(n_y, 2)` classes.
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        if self.is_binary() {
            let q = sigmoid(self.logit(0, x));
            return vec![1.0 - q, q];
        }
        let logits: Vec<f64> = (0..self.n_y).map(|r| self.logit(r, x)).collect();
        softmax(&logits)
    }

    /// Hard prediction. A binary model predicts 1 only when `q > 0.5`;
    /// multiclass ties go to the lowest class.
    pub fn predict(&self, x: &[f64]) -> usize {
        if self.is_binary() {
            return usize::from(self.positive_proba(x) > 0.5);
        }
        let p = self.predict_proba(x);
        let mut best = 0;
        for (c, &v) in p.iter().enumerate().skip(1) {
            if v > p[best] {
                best = c;
            }
        }
        best
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n")
            .map_err(|source| ModelError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum WeightsRepr {
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BiasRepr {
    Scalar(f64),
    Vector(Vec<f64>),
}

/// On-disk form: `{weights, bias, n_y, k}`; a binary model stores a weight
/// vector and a scalar bias, a multiclass one a matrix and a vector.
#[derive(Serialize, Deserialize)]
struct Checkpoint {
    weights: WeightsRepr,
    bias: BiasRepr,
    n_y: usize,
    k: usize,
}

impl From<ModelParams> for Checkpoint {
    fn from(p: ModelParams) -> Self {
        if p.is_binary() {
            Checkpoint {
                weights: WeightsRepr::Vector(p.weights),
                bias: BiasRepr::Scalar(p.bias[0]),
                n_y: p.n_y,
                k: p.k,
            }
        } else {
            let rows = p.weights.chunks(p.k.max(1)).map(<[f64]>::to_vec).collect();
            Checkpoint { weights: WeightsRepr::Matrix(rows), bias: BiasRepr::Vector(p.bias), n_y: p.n_y, k: p.k }
        }
    }
}

impl TryFrom<Checkpoint> for ModelParams {
    type Error = ModelError;

    fn try_from(c: Checkpoint) -> Result<Self, Self::Error> {
        let weights = match c.weights {
            WeightsRepr::Vector(w) => w,
            WeightsRepr::Matrix(rows) => rows.concat(),
        };
        let bias = match c.bias {
            BiasRepr::Scalar(b) => vec![b],
            BiasRepr::Vector(b) => b,
        };
        let rows = ModelParams::rows_for(c.n_y);
        if bias.len() != rows {
            return Err(ModelError::ShapeMismatch { what: "bias", got: bias.len(), expected: rows });
        }
        if weights.len() != rows * c.k {
            return Err(ModelError::ShapeMismatch { what: "weights", got: weights.len(), expected: rows * c.k });
        }
        Ok(ModelParams { k: c.k, n_y: c.n_y, weights, bias })
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn clip(q: f64) -> f64 {
    q.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

/// Loss of one example with target class `y`.
pub fn example_loss(p: &ModelParams, x: &[f64], y: usize, loss: Loss) -> f64 {
    match loss {
        Loss::ZeroOne => f64::from(u8::from(p.predict(x) != y)),
        Loss::CrossEntropy if p.is_binary() => {
            let q = clip(p.positive_proba(x));
            if y == 1 {
                -q.ln()
            } else {
                -(1.0 - q).ln()
            }
        }
        Loss::CrossEntropy => -clip(p.predict_proba(x)[y]).ln(),
    }
}

/// Adds the cross-entropy gradient of one example, scaled by `scale`, to `acc`.
///
/// This is the analytic `(q - y) x` form, which is the derivative of the
/// clipped loss wherever the clip is inactive.
fn accumulate_gradient(p: &ModelParams, x: &[f64], y: usize, scale: f64, acc: &mut Gradient) {
    let k = p.k;
    if p.is_binary() {
        let r = (p.positive_proba(x) - f64::from(u8::from(y == 1))) * scale;
        for (g, xi) in acc.weights.iter_mut().zip(x) {
            *g += r * xi;
        }
        acc.bias[0] += r;
        return;
    }
    let probs = p.predict_proba(x);
    for (c, q) in probs.iter().enumerate() {
        let r = (q - f64::from(u8::from(c == y))) * scale;
        for (g, xi) in acc.weights[c * k..(c + 1) * k].iter_mut().zip(x) {
            *g += r * xi;
        }
        acc.bias[c] += r;
    }
}

/// Gradient of one example's loss.
pub fn example_gradient(p: &ModelParams, x: &[f64], y: usize, loss: Loss) -> Result<Gradient, ModelError> {
    if loss == Loss::ZeroOne {
        return Err(ModelError::NotDifferentiable);
    }
    let mut g = ModelParams::zeros(p.k, p.n_y);
    accumulate_gradient(p, x, y, 1.0, &mut g);
    Ok(g)
}

/// Mean per-example gradient over `rows` of `d`. Repeated rows count once per
/// occurrence.
pub fn batch_gradient(p: &ModelParams, rows: &[usize], d: &Dataset, loss: Loss) -> Result<Gradient, ModelError> {
    if loss == Loss::ZeroOne {
        return Err(ModelError::NotDifferentiable);
    }
    if rows.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    if d.n_features() != p.k {
        return Err(ModelError::ShapeMismatch { what: "features", got: d.n_features(), expected: p.k });
    }
    let mut g = ModelParams::zeros(p.k, p.n_y);
    let scale = 1.0 / rows.len() as f64;
    for &i in rows {
        accumulate_gradient(p, d.row(i), d.label(i), scale, &mut g);
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.005, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment estimates and step count of an Adam run.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams, config: AdamConfig) -> Self {
        Self { config, first: vec![0.0; params.len()], second: vec![0.0; params.len()], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Bias-corrected Adam update applied in place.
    pub fn step(&mut self, params: &mut ModelParams, grad: &Gradient) -> Result<(), ModelError> {
        if !params.same_shape(grad) {
            return Err(ModelError::ShapeMismatch { what: "gradient", got: grad.len(), expected: params.len() });
        }
        if self.first.len() != params.len() {
            return Err(ModelError::ShapeMismatch {
                what: "optimizer state",
                got: self.first.len(),
                expected: params.len(),
            });
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powf(self.t as f64);
        let c2 = 1.0 - beta2.powf(self.t as f64);
        let moments = self.first.iter_mut().zip(self.second.iter_mut());
        for ((w, g), (m, v)) in params.values_mut().zip(grad.values()).zip(moments) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
        Ok(())
    }
}

/// Pure form of [`AdamState::step`].
pub fn adam_step(
    params: &ModelParams,
    state: &AdamState,
    grad: &Gradient,
) -> Result<(ModelParams, AdamState), ModelError> {
    let mut p = params.clone();
    let mut s = state.clone();
    s.step(&mut p, grad)?;
    Ok((p, s))
}
