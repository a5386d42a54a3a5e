//! Desk-scale classifiers with hand-written gradients, the per-round local
//! SGD loop, and the runtime estimates each worker reports afterwards:
//! smoothness (difference quotient of full-shard gradients), stochastic
//! gradient deviation (probe mini-batches) and the norm of the accumulated
//! local update.

use crate::numkit::{l2_distance, Rng};
use thiserror::Error;

/// Log-probabilities are floored here before entering the loss, so a
/// confidently-wrong prediction cannot overflow the average.
const LOG_PROB_FLOOR: f64 = -30.0;

/// Probe mini-batches drawn after the last local step for the sigma
/// estimate.
const SIGMA_PROBES: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum LearnError {
    #[error("feature vector has {0} entries, model expects {1}")]
    FeatureDim(usize, usize),
    #[error("label {0} out of range for {1} classes")]
    LabelRange(usize, usize),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("shard is empty")]
    EmptyShard,
    #[error("local updating frequency must be >= 1")]
    ZeroTau,
    #[error("model parameters became non-finite")]
    NonFiniteParams,
}

/// One labelled observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Softmax,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub features: usize,
    pub classes: usize,
}

impl ModelSpec {
    pub fn dim(&self) -> usize {
        match self.kind {
            ModelKind::Softmax => self.classes * (self.features + 1),
            ModelKind::Mlp { hidden } => {
                hidden * (self.features + 1) + self.classes * (hidden + 1)
            }
        }
    }
}

/// Flat parameter vector plus the spec describing its layout.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: Vec<f64>,
}

impl Model {
    pub fn zeros(spec: ModelSpec) -> Self {
        Model {
            spec,
            params: vec![0.0; spec.dim()],
        }
    }

    /// Small-gaussian initialisation; every worker copies the same draw.
    pub fn init(spec: ModelSpec, rng: &mut Rng) -> Self {
        let params = (0..spec.dim()).map(|_| rng.normal(0.0, 0.1)).collect();
        Model { spec, params }
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>, LearnError> {
        if x.len() != self.spec.features {
            return Err(LearnError::FeatureDim(x.len(), self.spec.features));
        }
        let f = self.spec.features;
        let c = self.spec.classes;
        match self.spec.kind {
            ModelKind::Softmax => {
                // params: [W (c x f) | b (c)]
                let mut z = vec![0.0; c];
                for k in 0..c {
                    let row = &self.params[k * f..(k + 1) * f];
                    z[k] = dot(row, x) + self.params[c * f + k];
                }
                Ok(z)
            }
            ModelKind::Mlp { hidden } => {
                // params: [W1 (h x f) | b1 (h) | W2 (c x h) | b2 (c)]
                let (w1, rest) = self.params.split_at(hidden * f);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(c * hidden);
                let mut a = vec![0.0; hidden];
                for u in 0..hidden {
                    a[u] = (dot(&w1[u * f..(u + 1) * f], x) + b1[u]).tanh();
                }
                let mut z = vec![0.0; c];
                for k in 0..c {
                    z[k] = dot(&w2[k * hidden..(k + 1) * hidden], &a) + b2[k];
                }
                Ok(z)
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize, LearnError> {
        let z = self.logits(x)?;
        Ok(argmax(&z))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = k;
        }
    }
    best
}

/// Softmax probabilities, shifted by the max logit for stability.
fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / s).collect()
}

/// Average cross-entropy loss and its exact gradient over a batch given as
/// indices into `shard`.
pub fn loss_and_gradient_idx(
    model: &Model,
    shard: &[Sample],
    indices: &[usize],
) -> Result<(f64, Vec<f64>), LearnError> {
    if indices.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    let f = model.spec.features;
    let c = model.spec.classes;
    let mut grad = vec![0.0; model.spec.dim()];
    let mut loss = 0.0;
    let inv_b = 1.0 / indices.len() as f64;

    for &si in indices {
        let sample = &shard[si];
        if sample.label >= c {
            return Err(LearnError::LabelRange(sample.label, c));
        }
        let x = &sample.features;
        match model.spec.kind {
            ModelKind::Softmax => {
                let z = model.logits(x)?;
                let p = softmax(&z);
                loss += -p[sample.label].ln().max(LOG_PROB_FLOOR);
                for k in 0..c {
                    let dz = (p[k] - if k == sample.label { 1.0 } else { 0.0 }) * inv_b;
                    let wrow = &mut grad[k * f..(k + 1) * f];
                    for (g, &xv) in wrow.iter_mut().zip(x) {
                        *g += dz * xv;
                    }
                    grad[c * f + k] += dz;
                }
            }
            ModelKind::Mlp { hidden } => {
                if x.len() != f {
                    return Err(LearnError::FeatureDim(x.len(), f));
                }
                let (w1, rest) = model.params.split_at(hidden * f);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(c * hidden);

                let mut a = vec![0.0; hidden];
                for u in 0..hidden {
                    a[u] = (dot(&w1[u * f..(u + 1) * f], x) + b1[u]).tanh();
                }
                let mut z = vec![0.0; c];
                for k in 0..c {
                    z[k] = dot(&w2[k * hidden..(k + 1) * hidden], &a) + b2[k];
                }
                let p = softmax(&z);
                loss += -p[sample.label].ln().max(LOG_PROB_FLOOR);

                let dz: Vec<f64> = (0..c)
                    .map(|k| (p[k] - if k == sample.label { 1.0 } else { 0.0 }) * inv_b)
                    .collect();
                // gradient slices mirror the parameter layout
                let (g1, grest) = grad.split_at_mut(hidden * f);
                let (gb1, grest) = grest.split_at_mut(hidden);
                let (g2, gb2) = grest.split_at_mut(c * hidden);

                let mut da = vec![0.0; hidden];
                for k in 0..c {
                    for u in 0..hidden {
                        g2[k * hidden + u] += dz[k] * a[u];
                        da[u] += dz[k] * w2[k * hidden + u];
                    }
                    gb2[k] += dz[k];
                }
                for u in 0..hidden {
                    let dpre = da[u] * (1.0 - a[u] * a[u]);
                    for (g, &xv) in g1[u * f..(u + 1) * f].iter_mut().zip(x) {
                        *g += dpre * xv;
                    }
                    gb1[u] += dpre;
                }
            }
        }
    }
    Ok((loss * inv_b, grad))
}

/// Same as [`loss_and_gradient_idx`] over a whole slice.
pub fn loss_and_gradient(model: &Model, batch: &[Sample]) -> Result<(f64, Vec<f64>), LearnError> {
    let indices: Vec<usize> = (0..batch.len()).collect();
    loss_and_gradient_idx(model, batch, &indices)
}

/// What a worker reports after a round of local updating.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GradEstimates {
    /// Smoothness estimate: ||grad f(x_end) - grad f(x_start)|| / ||x_end - x_start||.
    pub smoothness: f64,
    /// Root of the mean squared deviation between probe mini-batch gradients
    /// and the full-shard gradient at the round's end point.
    pub sigma: f64,
    /// Norm of the accumulated local update, ||x_start - x_end|| / eta.
    pub grad_norm: f64,
}

/// Difference-quotient smoothness estimate; `None` when the parameters did
/// not move.
pub fn estimate_smoothness(
    grad_start: &[f64],
    grad_end: &[f64],
    x_start: &[f64],
    x_end: &[f64],
) -> Option<f64> {
    let dx = l2_distance(x_start, x_end);
    if dx == 0.0 {
        return None;
    }
    Some(l2_distance(grad_start, grad_end) / dx)
}

/// Performs `tau` mini-batch SGD steps in place and returns the round's
/// estimates plus the per-step mini-batch loss trace.
///
/// Step batches come from `data_rng`; the sigma probes draw from
/// `probe_rng` so the step stream is untouched by estimation. When the
/// parameters do not move the smoothness estimate carries over from `prev`.
#[allow(clippy::too_many_arguments)]
pub fn local_update(
    model: &mut Model,
    shard: &[Sample],
    tau: u32,
    eta: f64,
    batch_size: usize,
    prev: Option<&GradEstimates>,
    data_rng: &mut Rng,
    probe_rng: &mut Rng,
) -> Result<(GradEstimates, Vec<f64>), LearnError> {
    if shard.is_empty() {
        return Err(LearnError::EmptyShard);
    }
    if tau == 0 {
        return Err(LearnError::ZeroTau);
    }
    let b = batch_size.max(1).min(shard.len());
    let x_start = model.params.clone();
    let (_, grad_start) = loss_and_gradient(model, shard)?;

    let mut scratch = Vec::with_capacity(shard.len());
    let mut trace = Vec::with_capacity(tau as usize);
    for _ in 0..tau {
        let idx = data_rng.sample_distinct(shard.len(), b, &mut scratch);
        let (loss, grad) = loss_and_gradient_idx(model, shard, &idx)?;
        trace.push(loss);
        for (p, g) in model.params.iter_mut().zip(&grad) {
            *p -= eta * g;
        }
    }
    if model.params.iter().any(|p| !p.is_finite()) {
        return Err(LearnError::NonFiniteParams);
    }

    let (_, grad_end) = loss_and_gradient(model, shard)?;
    let smoothness = estimate_smoothness(&grad_start, &grad_end, &x_start, &model.params)
        .unwrap_or_else(|| prev.map(|p| p.smoothness).unwrap_or(0.0));

    let grad_norm = if eta > 0.0 {
        l2_distance(&x_start, &model.params) / eta
    } else {
        0.0
    };

    let mut sq_dev = 0.0;
    for _ in 0..SIGMA_PROBES {
        let idx = probe_rng.sample_distinct(shard.len(), b, &mut scratch);
        let (_, probe_grad) = loss_and_gradient_idx(model, shard, &idx)?;
        sq_dev += l2_distance(&probe_grad, &grad_end).powi(2);
    }
    let sigma = (sq_dev / SIGMA_PROBES as f64).sqrt();

    Ok((
        GradEstimates {
            smoothness,
            sigma,
            grad_norm,
        },
        trace,
    ))
}

/// Mean top-1 accuracy of one model over a test set.
pub fn accuracy(model: &Model, test: &[Sample]) -> Result<f64, LearnError> {
    if test.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for s in test {
        if model.predict(&s.features)? == s.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / test.len() as f64)
}
