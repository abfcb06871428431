//! Multilayer perceptrons with optional dropout and batch normalization.

use std::rc::Rc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autograd::{log_sum_exp, neg_log_softmax, Tape, Var};
use crate::error::{arg_err, dim_err, Error, Result};
use crate::rng::{self, stream};
use crate::tensor::Tensor;

/// Architecture of an MLP: `layer_sizes = [input, hidden..., classes]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub layer_sizes: Vec<usize>,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub batchnorm: bool,
}

impl MlpConfig {
    pub fn new(layer_sizes: Vec<usize>) -> Self {
        Self {
            layer_sizes,
            dropout: 0.0,
            batchnorm: false,
        }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout = rate;
        self
    }

    pub fn with_batchnorm(mut self, on: bool) -> Self {
        self.batchnorm = on;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            return arg_err(format!("bad layer sizes {:?}", self.layer_sizes));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return arg_err(format!("dropout rate {} not in [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// Whether dropout is active. Training mode carries the seed of its masks so a
/// stochastic forward pass is reproducible.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { mask_seed: u64 },
}

/// Where batch-norm statistics come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnStats {
    Batch,
    Running,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    config: MlpConfig,
    /// `in × out` weight matrices.
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
    /// One per hidden layer when batch norm is enabled, otherwise empty.
    norms: Vec<BatchNorm>,
}

/// Batch statistics observed in a forward pass, per normalized layer.
pub type BatchStats = Vec<(Vec<f64>, Vec<f64>)>;

pub(crate) struct Built {
    pub logits: Var,
    pub params: Vec<Var>,
    /// Input to each dense layer.
    pub layer_inputs: Vec<Var>,
    /// Output of each dense layer (after bias, before normalization).
    pub pre_acts: Vec<Var>,
    /// Output of each normalization node.
    pub normed: Vec<Var>,
    pub stats: BatchStats,
}

impl MlpModel {
    /// Uniform `[-1/√fan_in, 1/√fan_in]` initialization for weights and biases.
    pub fn new(config: MlpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::rng_for(seed, stream::INIT);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in config.layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            let b = (0..fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
            weights.push(Tensor::from_parts(vec![fan_in, fan_out], w));
            biases.push(Tensor::vector(b));
        }
        let norms = if config.batchnorm {
            config.layer_sizes[1..config.layer_sizes.len() - 1]
                .iter()
                .map(|&w| BatchNorm {
                    gamma: Tensor::vector(vec![1.0; w]),
                    beta: Tensor::vector(vec![0.0; w]),
                    running_mean: vec![0.0; w],
                    running_var: vec![1.0; w],
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            config,
            weights,
            biases,
            norms,
        })
    }

    /// Builds a model from explicit `in × out` weights and biases.
    pub fn from_weights(config: MlpConfig, weights: Vec<Tensor>, biases: Vec<Tensor>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if weights.len() != model.weights.len() || biases.len() != model.biases.len() {
            return dim_err("layer count does not match configuration");
        }
        for (have, want) in weights.iter().zip(&model.weights).chain(biases.iter().zip(&model.biases)) {
            if have.shape() != want.shape() {
                return dim_err(format!("parameter shape {:?}, expected {:?}", have.shape(), want.shape()));
            }
        }
        model.weights = weights;
        model.biases = biases;
        Ok(model)
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn classes(&self) -> usize {
        self.config.classes()
    }

    pub fn norms(&self) -> &[BatchNorm] {
        &self.norms
    }

    /// Trainable parameters in a fixed order: per layer `W, b`, followed by
    /// `γ, β` of that layer's batch norm when present.
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in 0..self.weights.len() {
            out.push(&self.weights[l]);
            out.push(&self.biases[l]);
            if let Some(bn) = self.norms.get(l) {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        let mut norms = self.norms.iter_mut();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            out.push(b);
            if let Some(bn) = norms.next() {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    /// Folds batch statistics into the running estimates (unbiased variance,
    /// momentum [`BN_MOMENTUM`]).
    pub fn update_running_stats(&mut self, stats: &BatchStats, batch_size: usize) {
        let correction = if batch_size > 1 {
            batch_size as f64 / (batch_size as f64 - 1.0)
        } else {
            1.0
        };
        for (bn, (mean, var)) in self.norms.iter_mut().zip(stats) {
            for j in 0..mean.len() {
                bn.running_mean[j] = (1.0 - BN_MOMENTUM) * bn.running_mean[j] + BN_MOMENTUM * mean[j];
                bn.running_var[j] =
                    (1.0 - BN_MOMENTUM) * bn.running_var[j] + BN_MOMENTUM * var[j] * correction;
            }
        }
    }

    pub(crate) fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.config.input_dim() {
            return dim_err(format!(
                "input shape {:?}, model expects {} columns",
                x.shape(),
                self.config.input_dim()
            ));
        }
        Ok(())
    }

    pub(crate) fn build(&self, tape: &mut Tape, x: &Tensor, mode: Mode, bn: BnStats) -> Built {
        let n = x.rows();
        let mut h = tape.constant(x.clone());
        let mut params = Vec::new();
        let mut layer_inputs = Vec::new();
        let mut pre_acts = Vec::new();
        let mut normed = Vec::new();
        let mut stats = Vec::new();
        let mut mask_rng = match mode {
            Mode::Train { mask_seed } if self.config.dropout > 0.0 => {
                Some(rng::rng_for(mask_seed, stream::DROPOUT))
            }
            _ => None,
        };
        let depth = self.weights.len();
        for l in 0..depth {
            let w = tape.leaf(self.weights[l].clone());
            let b = tape.leaf(self.biases[l].clone());
            params.push(w);
            params.push(b);
            layer_inputs.push(h);
            let z = tape.matmul(h, w);
            let z = tape.add_bias(z, b);
            pre_acts.push(z);
            if l + 1 == depth {
                h = z;
                break;
            }
            let mut a = z;
            if let Some(norm) = self.norms.get(l) {
                let g = tape.leaf(norm.gamma.clone());
                let be = tape.leaf(norm.beta.clone());
                params.push(g);
                params.push(be);
                let fixed = match bn {
                    BnStats::Batch => None,
                    BnStats::Running => Some((&norm.running_mean[..], &norm.running_var[..])),
                };
                let (out, mean, var) = tape.batch_norm(a, g, be, fixed);
                if fixed.is_none() {
                    stats.push((mean, var));
                }
                normed.push(out);
                a = out;
            }
            a = tape.relu(a);
            if let Some(rng) = mask_rng.as_mut() {
                let p = self.config.dropout;
                let keep = 1.0 / (1.0 - p);
                let width = self.config.layer_sizes[l + 1];
                let mask: Rc<[f64]> = (0..n * width)
                    .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                    .collect();
                a = tape.mask(a, mask);
            }
            h = a;
        }
        Built {
            logits: h,
            params,
            layer_inputs,
            pre_acts,
            normed,
            stats,
        }
    }

    /// Logits for a batch. In [`Mode::Eval`] dropout is the identity; batch
    /// norm uses the statistics of `x` itself or the stored running ones
    /// according to `bn`.
    pub fn forward(&self, x: &Tensor, mode: Mode, bn: BnStats) -> Result<Tensor> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let built = self.build(&mut tape, x, mode, bn);
        Ok(tape.value(built.logits).clone())
    }

    /// Deterministic prediction: dropout off, running batch-norm statistics.
    pub fn predict_logits(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x, Mode::Eval, BnStats::Running)
    }

    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        Ok(softmax(&self.predict_logits(x)?))
    }

    /// Gradient of the mean cross-entropy over the batch.
    pub fn backward(&self, x: &Tensor, labels: &[usize], mode: Mode, bn: BnStats) -> Result<Gradient> {
        let n = labels.len();
        let weights = vec![1.0 / n.max(1) as f64; n];
        Ok(self.backward_weighted(x, labels, &weights, mode, bn)?.gradient)
    }

    /// Gradient of `Σ_i w_i · loss_i`.
    pub fn backward_weighted(
        &self,
        x: &Tensor,
        labels: &[usize],
        weights: &[f64],
        mode: Mode,
        bn: BnStats,
    ) -> Result<WeightedPass> {
        self.check_input(x)?;
        if labels.len() != x.rows() || weights.len() != x.rows() {
            return dim_err("labels, weights and rows disagree in length");
        }
        check_labels(labels, self.classes())?;
        let mut tape = Tape::new();
        let built = self.build(&mut tape, x, mode, bn);
        let loss = tape.cross_entropy(built.logits, labels, weights);
        let loss_value = tape.value(loss).values()[0];
        let mut grads = tape.backward(loss);
        let parts = built
            .params
            .iter()
            .map(|&p| {
                grads
                    .take(p)
                    .unwrap_or_else(|| Tensor::zeros(tape.value(p).shape()))
            })
            .collect();
        Ok(WeightedPass {
            gradient: Gradient(parts),
            stats: built.stats,
            loss: loss_value,
        })
    }

    /// Per-example losses under a given forward configuration.
    pub fn losses(&self, x: &Tensor, labels: &[usize], mode: Mode, bn: BnStats) -> Result<Vec<f64>> {
        cross_entropy(&self.forward(x, mode, bn)?, labels)
    }

    /// Euclidean norm of the full-parameter gradient of a single example's
    /// loss, evaluated deterministically (dropout off, running statistics).
    pub fn per_example_grad_norm(&self, x: &[f64], y: usize) -> Result<f64> {
        let xt = Tensor::matrix(1, x.len(), x.to_vec())?;
        let g = self.backward(&xt, &[y], Mode::Eval, BnStats::Running)?;
        Ok(g.norm())
    }

    /// [`Self::per_example_grad_norm`] for every row at once. Rows are
    /// independent in evaluation mode, so the per-example gradient of layer
    /// `l` is the outer product `a_{l-1,i} ⊗ δ_{l,i}` and its squared norm
    /// factorizes as `‖a‖²‖δ‖²`.
    pub fn per_example_grad_norms(&self, x: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        check_labels(labels, self.classes())?;
        let n = x.rows();
        let mut tape = Tape::new();
        let built = self.build(&mut tape, x, Mode::Eval, BnStats::Running);
        let ones = vec![1.0; n];
        let loss = tape.cross_entropy(built.logits, labels, &ones);
        let grads = tape.backward(loss);
        let mut sq = vec![0.0; n];
        for (l, (&input, &pre)) in built.layer_inputs.iter().zip(&built.pre_acts).enumerate() {
            let a = tape.value(input);
            let delta = grads.of(pre).expect("every layer feeds the loss");
            for (i, s) in sq.iter_mut().enumerate() {
                let d2: f64 = delta.row(i).iter().map(|v| v * v).sum();
                let a2: f64 = a.row(i).iter().map(|v| v * v).sum();
                *s += d2 * a2 + d2;
            }
            if let Some(&out) = built.normed.get(l) {
                // y = x̂γ + β: per-example dγ = dy ⊙ x̂, dβ = dy
                let dy = grads.of(out).expect("normalized output feeds the loss");
                let bn = &self.norms[l];
                let z = tape.value(pre);
                for (i, s) in sq.iter_mut().enumerate() {
                    for j in 0..dy.cols() {
                        let xhat = (z.row(i)[j] - bn.running_mean[j])
                            / (bn.running_var[j] + crate::autograd::NORM_EPS).sqrt();
                        let d = dy.row(i)[j];
                        *s += d * d * (xhat * xhat + 1.0);
                    }
                }
            }
        }
        Ok(sq.into_iter().map(f64::sqrt).collect())
    }

    /// Norm of the loss gradient with respect to the logits, `‖softmax − e_y‖`.
    /// A cheap proxy that bounds the full gradient norm up to a
    /// model-dependent constant.
    pub fn last_layer_grad_norms(&self, x: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
        let probs = self.predict_proba(x)?;
        check_labels(labels, self.classes())?;
        Ok(probs
            .iter_rows()
            .zip(labels)
            .map(|(p, &y)| {
                p.iter()
                    .enumerate()
                    .map(|(c, v)| if c == y { (v - 1.0).powi(2) } else { v * v })
                    .sum::<f64>()
                    .sqrt()
            })
            .collect())
    }

    /// `samples` stochastic forward passes with dropout active, as
    /// probability matrices. Sample `k` uses mask seed `seed + k`.
    pub fn mc_dropout_predict(&self, x: &Tensor, samples: usize, seed: u64) -> Result<Vec<Tensor>> {
        if samples == 0 {
            return arg_err("at least one Monte-Carlo sample is required");
        }
        (0..samples as u64)
            .map(|k| {
                let mode = Mode::Train {
                    mask_seed: seed.wrapping_add(k),
                };
                Ok(softmax(&self.forward(x, mode, BnStats::Running)?))
            })
            .collect()
    }
}

/// Result of [`MlpModel::backward_weighted`].
#[derive(Clone, Debug)]
pub struct WeightedPass {
    pub gradient: Gradient,
    /// Batch statistics of the pass; empty unless batch norm used them.
    pub stats: BatchStats,
    /// The weighted loss `Σ_i w_i · loss_i`.
    pub loss: f64,
}

/// A parameter-shaped gradient, in [`MlpModel::parameters`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient(pub Vec<Tensor>);

impl Gradient {
    pub fn norm(&self) -> f64 {
        self.0.iter().map(Tensor::squared_norm).sum::<f64>().sqrt()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flat_map(|t| t.values().iter().copied()).collect()
    }

    pub fn zeros_like(model: &MlpModel) -> Self {
        Gradient(model.parameters().iter().map(|t| Tensor::zeros(t.shape())).collect())
    }

    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.values_mut().iter_mut().zip(b.values()) {
                *x += scale * y;
            }
        }
    }
}

pub(crate) fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().find(|&&y| y >= classes) {
        Some(y) => Err(Error::Domain(format!("label {y} outside [0, {classes})"))),
        None => Ok(()),
    }
}

/// Row-wise softmax.
pub fn softmax(logits: &Tensor) -> Tensor {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.iter_rows() {
        let lse = log_sum_exp(row);
        out.extend(row.iter().map(|z| (z - lse).exp()));
    }
    Tensor::from_parts(logits.shape().to_vec(), out)
}

/// Per-example `−log softmax(logits_i)[label_i]`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    if logits.rows() != labels.len() {
        return dim_err(format!("{} logit rows for {} labels", logits.rows(), labels.len()));
    }
    check_labels(labels, logits.cols())?;
    Ok(logits
        .iter_rows()
        .zip(labels)
        .map(|(row, &y)| neg_log_softmax(row, y))
        .collect())
}

/// Shannon entropy in nats of each row of a probability matrix.
pub fn entropy_rows(probs: &Tensor) -> Vec<f64> {
    probs.iter_rows().map(entropy).collect()
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// A bag of independently initialized networks whose averaged predictive
/// distribution stands in for a posterior predictive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    members: Vec<MlpModel>,
}

impl EnsembleModel {
    pub fn new(config: MlpConfig, size: usize, seed: u64) -> Result<Self> {
        if size == 0 {
            return arg_err("ensemble needs at least one member");
        }
        let members = (0..size as u64)
            .map(|k| MlpModel::new(config.clone(), rng::derive_seed(seed, stream::ENSEMBLE + 100 * k)))
            .collect::<Result<_>>()?;
        Ok(Self { members })
    }

    pub fn from_members(members: Vec<MlpModel>) -> Result<Self> {
        let Some(first) = members.first() else {
            return arg_err("ensemble needs at least one member");
        };
        if members.iter().any(|m| m.config().layer_sizes != first.config().layer_sizes) {
            return arg_err("ensemble members must share layer sizes");
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[MlpModel] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [MlpModel] {
        &mut self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Arithmetic mean of member softmax outputs.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        let mut acc: Option<Tensor> = None;
        for m in &self.members {
            let p = m.predict_proba(x)?;
            match acc.as_mut() {
                None => acc = Some(p),
                Some(a) => a.values_mut().iter_mut().zip(p.values()).for_each(|(s, v)| *s += v),
            }
        }
        let mut acc = acc.expect("nonempty ensemble");
        let k = self.members.len() as f64;
        acc.values_mut().iter_mut().for_each(|v| *v /= k);
        Ok(acc)
    }

    /// `−log p̄(y|x)` under the averaged predictive distribution.
    pub fn losses(&self, x: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
        let p = self.predict_proba(x)?;
        check_labels(labels, p.cols())?;
        Ok(p.iter_rows().zip(labels).map(|(row, &y)| -row[y].ln()).collect())
    }
}
