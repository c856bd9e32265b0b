//! Desk-scale models: multinomial logistic regression and a one-hidden-layer
//! tanh MLP, both trained with mini-batch SGD on softmax cross-entropy.

use serde::{Deserialize, Serialize};

use crate::data::LocalDataset;
use crate::error::{Error, Result};
use crate::param::{GroupPartition, ParamVector};
use crate::rng::{standard_normal_at, Purpose, StreamKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelKind {
    LogisticRegression,
    Mlp { hidden_dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    kind: ModelKind,
    feature_dim: usize,
    num_classes: usize,
    weights: ParamVector,
}

impl Model {
    /// Tensor layout in declaration order; weight matrices are row-major
    /// `(out, in)`.
    pub fn partition(
        kind: ModelKind,
        feature_dim: usize,
        num_classes: usize,
    ) -> Result<GroupPartition> {
        match kind {
            ModelKind::LogisticRegression => GroupPartition::from_sizes([
                ("weight", num_classes * feature_dim),
                ("bias", num_classes),
            ]),
            ModelKind::Mlp { hidden_dim } => GroupPartition::from_sizes([
                ("hidden.weight", hidden_dim * feature_dim),
                ("hidden.bias", hidden_dim),
                ("out.weight", num_classes * hidden_dim),
                ("out.bias", num_classes),
            ]),
        }
    }

    pub fn zeros(kind: ModelKind, feature_dim: usize, num_classes: usize) -> Result<Self> {
        Self::validate_dims(kind, feature_dim, num_classes)?;
        let weights = ParamVector::zeros(Self::partition(kind, feature_dim, num_classes)?);
        Ok(Self {
            kind,
            feature_dim,
            num_classes,
            weights,
        })
    }

    /// Seeded initialisation: weight matrices ~ N(0, 1/fan_in), biases zero.
    pub fn initialize(
        kind: ModelKind,
        feature_dim: usize,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut model = Self::zeros(kind, feature_dim, num_classes)?;
        let fan_ins: Vec<Option<usize>> = match kind {
            ModelKind::LogisticRegression => vec![Some(feature_dim), None],
            ModelKind::Mlp { hidden_dim } => vec![Some(feature_dim), None, Some(hidden_dim), None],
        };
        for (g, fan_in) in fan_ins.into_iter().enumerate() {
            let Some(fan_in) = fan_in else { continue };
            let key = StreamKey::for_purpose(seed, Purpose::ModelInit, 0, g as u32);
            let scale = 1.0 / (fan_in as f64).sqrt();
            for (j, w) in model.weights.group_mut(g).iter_mut().enumerate() {
                *w = scale * standard_normal_at(key, j as u64);
            }
        }
        Ok(model)
    }

    pub fn from_weights(
        kind: ModelKind,
        feature_dim: usize,
        num_classes: usize,
        weights: ParamVector,
    ) -> Result<Self> {
        Self::validate_dims(kind, feature_dim, num_classes)?;
        if *weights.partition() != Self::partition(kind, feature_dim, num_classes)? {
            return Err(Error::Shape("weights do not match the architecture".into()));
        }
        Ok(Self {
            kind,
            feature_dim,
            num_classes,
            weights,
        })
    }

    fn validate_dims(kind: ModelKind, feature_dim: usize, num_classes: usize) -> Result<()> {
        if feature_dim == 0 || num_classes < 2 || matches!(kind, ModelKind::Mlp { hidden_dim: 0 }) {
            return Err(Error::InvalidConfig(format!(
                "bad architecture {kind:?} with {feature_dim} features and {num_classes} classes"
            )));
        }
        Ok(())
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn weights(&self) -> &ParamVector {
        &self.weights
    }

    pub fn with_weights(&self, weights: ParamVector) -> Result<Self> {
        Self::from_weights(self.kind, self.feature_dim, self.num_classes, weights)
    }

    pub fn num_params(&self) -> usize {
        self.weights.len()
    }

    fn same_architecture(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.feature_dim == other.feature_dim
            && self.num_classes == other.num_classes
    }

    /// Class logits for one example; `hidden` receives tanh activations for the MLP.
    fn forward(&self, x: &[f64], hidden: &mut Vec<f64>, logits: &mut [f64]) {
        let w = &self.weights;
        match self.kind {
            ModelKind::LogisticRegression => affine(w.group(0), w.group(1), x, logits),
            ModelKind::Mlp { hidden_dim } => {
                hidden.resize(hidden_dim, 0.0);
                affine(w.group(0), w.group(1), x, hidden);
                hidden.iter_mut().for_each(|h| *h = h.tanh());
                affine(w.group(2), w.group(3), hidden, logits);
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let mut hidden = Vec::new();
        let mut logits = vec![0.0; self.num_classes];
        self.forward(x, &mut hidden, &mut logits);
        argmax(&logits)
    }

    pub fn accuracy(&self, data: &LocalDataset) -> f64 {
        let correct = (0..data.len())
            .filter(|&i| self.predict(data.row(i)) == data.label(i))
            .count();
        correct as f64 / data.len() as f64
    }

    /// Mean cross-entropy over `batch` and its gradient with respect to the
    /// flat weight vector.
    pub fn loss_and_grad(&self, data: &LocalDataset, batch: &[usize]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.weights.len()];
        let mut hidden = Vec::new();
        let mut logits = vec![0.0; self.num_classes];
        let mut loss = 0.0;
        let parts = self.weights.partition().groups().to_vec();
        for &i in batch {
            let x = data.row(i);
            let y = data.label(i);
            self.forward(x, &mut hidden, &mut logits);
            let lse = log_sum_exp(&logits);
            loss += lse - logits[y];
            // dL/dlogits = softmax - onehot
            let dlogits: Vec<f64> = logits
                .iter()
                .enumerate()
                .map(|(c, &z)| (z - lse).exp() - f64::from(u8::from(c == y)))
                .collect();
            match self.kind {
                ModelKind::LogisticRegression => {
                    accumulate_affine_grad(
                        &mut grad,
                        parts[0].offset,
                        parts[1].offset,
                        &dlogits,
                        x,
                    );
                }
                ModelKind::Mlp { .. } => {
                    accumulate_affine_grad(
                        &mut grad,
                        parts[2].offset,
                        parts[3].offset,
                        &dlogits,
                        &hidden,
                    );
                    let w_out = self.weights.group(2);
                    let h = hidden.len();
                    let dhidden: Vec<f64> = (0..h)
                        .map(|j| {
                            let back: f64 = dlogits
                                .iter()
                                .enumerate()
                                .map(|(c, d)| d * w_out[c * h + j])
                                .sum();
                            back * (1.0 - hidden[j] * hidden[j])
                        })
                        .collect();
                    accumulate_affine_grad(
                        &mut grad,
                        parts[0].offset,
                        parts[1].offset,
                        &dhidden,
                        x,
                    );
                }
            }
        }
        let n = batch.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        (loss / n, grad)
    }
}

fn affine(weight: &[f64], bias: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, (row, b)) in out.iter_mut().zip(weight.chunks_exact(n_in).zip(bias)) {
        *o = b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
    }
}

fn accumulate_affine_grad(
    grad: &mut [f64],
    w_off: usize,
    b_off: usize,
    dout: &[f64],
    input: &[f64],
) {
    let n_in = input.len();
    for (o, &d) in dout.iter().enumerate() {
        let row = &mut grad[w_off + o * n_in..w_off + (o + 1) * n_in];
        for (g, xi) in row.iter_mut().zip(input) {
            *g += d * xi;
        }
        grad[b_off + o] += d;
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}

/// Runs `epochs` of mini-batch SGD and returns the trained copy.
///
/// Each epoch visits the examples in a permutation drawn from the
/// `(seed, Shuffle, epoch)` stream; the last batch may be short.
pub fn local_train(
    model: &Model,
    data: &LocalDataset,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<Model> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
    }
    if data.feature_dim() != model.feature_dim || data.num_classes() > model.num_classes {
        return Err(Error::Shape("dataset does not fit the model".into()));
    }
    let mut trained = model.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..epochs {
        let key = StreamKey::for_purpose(seed, Purpose::Shuffle, epoch as u32, 0);
        shuffle(&mut order, key);
        for (step, batch) in order.chunks(batch_size).enumerate() {
            let (loss, grad) = trained.loss_and_grad(data, batch);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch, step });
            }
            for (w, g) in trained.weights.values_mut().iter_mut().zip(&grad) {
                *w -= lr * g;
            }
            if !trained.weights.is_finite() {
                return Err(Error::TrainingDiverged { epoch, step });
            }
        }
    }
    Ok(trained)
}

/// Fisher-Yates driven by a counter-based stream.
pub fn shuffle<T>(items: &mut [T], key: StreamKey) {
    for i in (1..items.len()).rev() {
        let j = key.below_at(i as u64, i as u64 + 1) as usize;
        items.swap(i, j);
    }
}

/// `trained - base` with the base's partition.
pub fn model_delta(trained: &Model, base: &Model) -> Result<ParamVector> {
    if !trained.same_architecture(base) {
        return Err(Error::Shape("models have different architectures".into()));
    }
    trained.weights.sub(&base.weights)
}
