//! Feed-forward feature encoder with a softmax classifier head.
//!
//! The trunk is a stack of dense layers with `tanh` between them; the output of
//! the last trunk layer is the embedding used for clustering and retrieval. The
//! head maps embeddings to logits over the current class count.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthgen::Dataset;

/// Dense affine layer, weights row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn init(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Accumulates `dW += g ⊗ input`, `db += g` and returns `Wᵀ g`.
    fn backward(&self, input: &[f64], grad_out: &[f64], acc: &mut Dense) -> Vec<f64> {
        let mut grad_in = vec![0.0; self.inputs];
        for (o, g) in grad_out.iter().enumerate() {
            if *g == 0.0 {
                continue;
            }
            acc.bias[o] += g;
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let acc_row = &mut acc.weights[o * self.inputs..(o + 1) * self.inputs];
            for i in 0..self.inputs {
                acc_row[i] += g * input[i];
                grad_in[i] += g * row[i];
            }
        }
        grad_in
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Encoder {
    pub layers: Vec<Dense>,
    pub head: Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub embedding: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Per-sample supervision for the combined loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Supervision {
    /// Class or cluster index in head coordinates.
    pub label: usize,
    /// `λ = 1`: a selected unlabeled sample trained against `weights`.
    pub unlabeled: bool,
    /// Soft target over the full head width; required when `unlabeled`.
    pub weights: Option<Vec<f64>>,
}

impl Supervision {
    pub fn hard(label: usize) -> Self {
        Self {
            label,
            unlabeled: false,
            weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs_per_iteration: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs_per_iteration: 20,
            batch_size: 32,
            weight_decay: 1e-4,
            seed: 17,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be positive"));
        }
        if self.epochs_per_iteration == 0 {
            return Err(Error::config("train.epochs_per_iteration", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("train.weight_decay", "must be non-negative"));
        }
        Ok(())
    }
}

/// Row-per-sample embedding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

pub fn init_encoder(
    feature_dim: usize,
    hidden_dims: &[usize],
    embed_dim: usize,
    k_classes: usize,
    seed: u64,
) -> Result<Encoder> {
    let named = [
        ("feature_dim", feature_dim),
        ("embed_dim", embed_dim),
        ("k_classes", k_classes),
    ];
    for (field, v) in named {
        if v == 0 {
            return Err(Error::config(field, "must be at least 1"));
        }
    }
    if hidden_dims.contains(&0) {
        return Err(Error::config("hidden_dims", "every hidden width must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dims = vec![feature_dim];
    dims.extend_from_slice(hidden_dims);
    dims.push(embed_dim);
    let layers = dims
        .windows(2)
        .map(|w| Dense::init(w[0], w[1], &mut rng))
        .collect();
    let head = Dense::init(embed_dim, k_classes, &mut rng);
    Ok(Encoder { layers, head })
}

struct Trace {
    /// `activations[0]` is the input, `activations[l + 1]` the output of layer `l`.
    activations: Vec<Vec<f64>>,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl Encoder {
    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn embed_dim(&self) -> usize {
        self.head.inputs
    }

    pub fn classes(&self) -> usize {
        self.head.outputs
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn embedding(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut a = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            a = layer.forward(&a);
            if l < last {
                a.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
        Ok(a)
    }

    fn trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut a = layer.forward(activations.last().expect("nonempty"));
            if l < last {
                a.iter_mut().for_each(|v| *v = v.tanh());
            }
            activations.push(a);
        }
        let logits = self.head.forward(activations.last().expect("nonempty"));
        let (probs, log_probs) = softmax(&logits);
        Ok(Trace {
            activations,
            probs,
            log_probs,
        })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        let t = self.trace(x)?;
        Ok(Forward {
            embedding: t.activations.last().cloned().expect("nonempty"),
            probs: t.probs,
        })
    }

    /// Replaces the classifier head with a fresh one of width `k_new`.
    pub fn rebuild_head(&self, k_new: usize, seed: u64) -> Result<Encoder> {
        if k_new == 0 {
            return Err(Error::config("k_new", "must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Encoder {
            layers: self.layers.clone(),
            head: Dense::init(self.embed_dim(), k_new, &mut rng),
        })
    }

    pub fn zeros_like(&self) -> Encoder {
        Encoder {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
            head: Dense::zeros(self.head.inputs, self.head.outputs),
        }
    }

    fn dense_layers(&self) -> impl Iterator<Item = &Dense> {
        self.layers.iter().chain(std::iter::once(&self.head))
    }

    fn dense_layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.layers.iter_mut().chain(std::iter::once(&mut self.head))
    }

    /// Every parameter in a fixed order: per layer, weights then biases.
    pub fn parameters(&self) -> Vec<f64> {
        self.dense_layers()
            .flat_map(|d| d.weights.iter().chain(&d.bias).copied())
            .collect()
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.dense_layers_mut()
            .flat_map(|d| d.weights.iter_mut().chain(d.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.dense_layers().all(Dense::is_finite)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Encoder> {
        let e: Encoder = serde_json::from_str(s)?;
        e.check_shapes()?;
        Ok(e)
    }

    fn check_shapes(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Invalid("checkpoint has no trunk layers".into()));
        }
        let mut width = self.layers[0].inputs;
        for d in self.dense_layers() {
            if d.inputs != width
                || d.weights.len() != d.inputs * d.outputs
                || d.bias.len() != d.outputs
                || d.outputs == 0
            {
                return Err(Error::Invalid("checkpoint layer shapes are inconsistent".into()));
            }
            width = d.outputs;
        }
        if self.head.inputs != self.layers[self.layers.len() - 1].outputs {
            return Err(Error::Invalid("head input width differs from embedding width".into()));
        }
        if !self.is_finite() {
            return Err(Error::Invalid("checkpoint contains non-finite parameters".into()));
        }
        Ok(())
    }

    /// Batch-mean combined loss and its exact gradient with respect to every parameter.
    ///
    /// Hard-labelled samples use `σ = 0`; unlabeled samples use `sigma`.
    pub fn loss_and_gradient(
        &self,
        batch: &[(&[f64], &Supervision)],
        sigma: f64,
    ) -> Result<(f64, Encoder)> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let k = self.classes();
        let scale = 1.0 / batch.len() as f64;
        let mut grad = self.zeros_like();
        let mut total = 0.0;
        let last = self.layers.len() - 1;
        for (index, (x, sup)) in batch.iter().enumerate() {
            if sup.label >= k {
                return Err(Error::LabelOutOfRange {
                    label: sup.label,
                    classes: k,
                });
            }
            let weights = match (&sup.weights, sup.unlabeled) {
                (Some(w), true) => {
                    if w.len() != k {
                        return Err(Error::DimensionMismatch {
                            expected: k,
                            found: w.len(),
                        });
                    }
                    Some(w.as_slice())
                }
                (None, true) => return Err(Error::MissingWeights { index }),
                (_, false) => None,
            };
            let s = if sup.unlabeled { sigma } else { 0.0 };
            let t = self.trace(x)?;

            let mut loss = -(1.0 - s) * t.log_probs[sup.label];
            let mut g_logits: Vec<f64> = t.probs.iter().map(|p| (1.0 - s) * p).collect();
            g_logits[sup.label] -= 1.0 - s;
            if let Some(w) = weights {
                let mass: f64 = w.iter().sum();
                for j in 0..k {
                    loss -= s * w[j] * t.log_probs[j];
                    g_logits[j] += s * (mass * t.probs[j] - w[j]);
                }
            }
            total += loss;
            g_logits.iter_mut().for_each(|g| *g *= scale);

            let embedding = &t.activations[self.layers.len()];
            let mut g = self.head.backward(embedding, &g_logits, &mut grad.head);
            for l in (0..self.layers.len()).rev() {
                if l < last {
                    let out = &t.activations[l + 1];
                    g.iter_mut().zip(out).for_each(|(g, a)| *g *= 1.0 - a * a);
                }
                g = self.layers[l].backward(&t.activations[l], &g, &mut grad.layers[l]);
            }
        }
        Ok((total * scale, grad))
    }

    /// Batch-mean loss without gradients.
    pub fn loss(&self, batch: &[(&[f64], &Supervision)], sigma: f64) -> Result<f64> {
        Ok(self.loss_and_gradient(batch, sigma)?.0)
    }
}

/// Probabilities and log-probabilities of a logit vector.
fn softmax(logits: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.iter().map(|z| z - max).collect();
    let sum: f64 = shifted.iter().map(|z| z.exp()).sum();
    let log_sum = sum.ln();
    let log_probs: Vec<f64> = shifted.iter().map(|z| z - log_sum).collect();
    let probs = log_probs.iter().map(|l| l.exp().max(f64::MIN_POSITIVE)).collect();
    (probs, log_probs)
}

pub fn embed(e: &Encoder, d: &Dataset) -> Result<FeatureMatrix> {
    let rows = d
        .samples
        .iter()
        .map(|s| e.embedding(&s.features))
        .collect::<Result<_>>()?;
    Ok(FeatureMatrix { rows })
}

/// One gradient-descent update with weight decay on weight matrices.
/// Returns the loss before the update.
pub fn train_step(
    e: &mut Encoder,
    batch: &[(&[f64], &Supervision)],
    cfg: &TrainConfig,
    sigma: f64,
) -> Result<f64> {
    let (loss, grad) = e.loss_and_gradient(batch, sigma)?;
    let lr = cfg.learning_rate;
    let decay = cfg.weight_decay;
    for (layer, g) in e.dense_layers_mut().zip(grad.dense_layers()) {
        for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
            *w -= lr * (gw + decay * *w);
        }
        for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
            *b -= lr * gb;
        }
    }
    Ok(loss)
}

/// Runs `cfg.epochs_per_iteration` shuffled epochs and returns the mean loss of each.
pub fn train_epochs(
    e: &mut Encoder,
    data: &[(&[f64], &Supervision)],
    cfg: &TrainConfig,
    sigma: f64,
    shuffle_seed: u64,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs_per_iteration);
    for _ in 0..cfg.epochs_per_iteration {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&[f64], &Supervision)> = chunk.iter().map(|&i| data[i]).collect();
            sum += train_step(e, &batch, cfg, sigma)? * batch.len() as f64;
        }
        epoch_losses.push(sum / data.len() as f64);
    }
    if !e.is_finite() {
        return Err(Error::Invalid("training diverged to non-finite parameters".into()));
    }
    Ok(epoch_losses)
}
