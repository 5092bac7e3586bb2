//! Classifiers, sum-reduced cross-entropy, input dropout, Adam and the
//! warm-up learning-rate schedule.
//!
//! Models keep all of their parameters in one flat vector so optimizer
//! state, freezing and checksums work the same way for every architecture.

use rand::Rng as _;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Common interface of the trainable classifiers.
pub trait Classifier {
    fn n_inputs(&self) -> usize;
    fn n_classes(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// Writes the logits for one input into `logits`.
    fn forward(&self, x: &[f64], logits: &mut [f64]);

    /// Accumulates parameter gradients into `d_params` and writes the input
    /// gradient into `d_input`, each only when requested.
    fn backward(&self, x: &[f64], d_logits: &[f64], d_params: Option<&mut [f64]>, d_input: Option<&mut [f64]>);
}

/// Multinomial logistic regression. Parameters: `G x D` weights (row-major)
/// followed by `G` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub n_inputs: usize,
    pub n_classes: usize,
    pub params: Vec<f64>,
}

impl LogRegModel {
    pub fn zeros(n_inputs: usize, n_classes: usize) -> Self {
        LogRegModel {
            n_inputs,
            n_classes,
            params: vec![0.0; n_classes * (n_inputs + 1)],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.params[..self.n_classes * self.n_inputs]
    }

    pub fn biases(&self) -> &[f64] {
        &self.params[self.n_classes * self.n_inputs..]
    }
}

impl Classifier for LogRegModel {
    fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward(&self, x: &[f64], logits: &mut [f64]) {
        let w = self.weights();
        let b = self.biases();
        for (k, out) in logits.iter_mut().enumerate() {
            let row = &w[k * self.n_inputs..(k + 1) * self.n_inputs];
            *out = b[k] + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
        }
    }

    fn backward(&self, x: &[f64], d_logits: &[f64], d_params: Option<&mut [f64]>, d_input: Option<&mut [f64]>) {
        let d = self.n_inputs;
        if let Some(d_params) = d_params {
            let (dw, db) = d_params.split_at_mut(self.n_classes * d);
            for (k, &g) in d_logits.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                for (acc, v) in dw[k * d..(k + 1) * d].iter_mut().zip(x) {
                    *acc += g * v;
                }
                db[k] += g;
            }
        }
        if let Some(dx) = d_input {
            dx.iter_mut().for_each(|v| *v = 0.0);
            let w = self.weights();
            for (k, &g) in d_logits.iter().enumerate() {
                for (acc, a) in dx.iter_mut().zip(&w[k * d..(k + 1) * d]) {
                    *acc += g * a;
                }
            }
        }
    }
}

/// One-hidden-layer perceptron with ReLU. Parameters: `W1 (H x D)`, `b1 (H)`,
/// `W2 (G x H)`, `b2 (G)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub n_inputs: usize,
    pub hidden: usize,
    pub n_classes: usize,
    pub params: Vec<f64>,
}

impl MlpModel {
    pub const DEFAULT_HIDDEN: usize = 128;

    /// He-uniform first layer, Glorot-uniform output layer, zero biases.
    pub fn new(n_inputs: usize, hidden: usize, n_classes: usize, rng: &mut Rng) -> Self {
        let mut params = vec![0.0; hidden * n_inputs + hidden + n_classes * hidden + n_classes];
        let l1 = (6.0 / n_inputs as f64).sqrt();
        let u1 = Uniform::new_inclusive(-l1, l1);
        for v in &mut params[..hidden * n_inputs] {
            *v = u1.sample(rng);
        }
        let l2 = (6.0 / (hidden + n_classes) as f64).sqrt();
        let u2 = Uniform::new_inclusive(-l2, l2);
        let start = hidden * n_inputs + hidden;
        for v in &mut params[start..start + n_classes * hidden] {
            *v = u2.sample(rng);
        }
        MlpModel {
            n_inputs,
            hidden,
            n_classes,
            params,
        }
    }

    fn split(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let (w1, rest) = self.params.split_at(self.hidden * self.n_inputs);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, b2) = rest.split_at(self.n_classes * self.hidden);
        (w1, b1, w2, b2)
    }

    /// Hidden-layer inputs before the ReLU.
    pub fn pre_activations(&self, x: &[f64]) -> Vec<f64> {
        let (w1, b1, _, _) = self.split();
        (0..self.hidden)
            .map(|j| {
                let row = &w1[j * self.n_inputs..(j + 1) * self.n_inputs];
                b1[j] + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>()
            })
            .collect()
    }

    fn hidden_activations(&self, x: &[f64]) -> Vec<f64> {
        let mut h = self.pre_activations(x);
        for v in &mut h {
            *v = v.max(0.0);
        }
        h
    }
}

impl Classifier for MlpModel {
    fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward(&self, x: &[f64], logits: &mut [f64]) {
        let h = self.hidden_activations(x);
        let (_, _, w2, b2) = self.split();
        for (k, out) in logits.iter_mut().enumerate() {
            let row = &w2[k * self.hidden..(k + 1) * self.hidden];
            *out = b2[k] + row.iter().zip(&h).map(|(a, v)| a * v).sum::<f64>();
        }
    }

    fn backward(&self, x: &[f64], d_logits: &[f64], d_params: Option<&mut [f64]>, d_input: Option<&mut [f64]>) {
        let h = self.hidden_activations(x);
        let (_, _, w2, _) = self.split();
        let (d, hid, g) = (self.n_inputs, self.hidden, self.n_classes);

        let mut dh = vec![0.0; hid];
        for k in 0..g {
            let gk = d_logits[k];
            for j in 0..hid {
                dh[j] += gk * w2[k * hid + j];
            }
        }
        // ReLU gate; zero pre-activation takes the inactive branch
        for (dj, hj) in dh.iter_mut().zip(&h) {
            if *hj <= 0.0 {
                *dj = 0.0;
            }
        }
        if let Some(d_params) = d_params {
            let (dw1, rest) = d_params.split_at_mut(hid * d);
            let (db1, rest) = rest.split_at_mut(hid);
            let (dw2, db2) = rest.split_at_mut(g * hid);
            for k in 0..g {
                db2[k] += d_logits[k];
                for j in 0..hid {
                    dw2[k * hid + j] += d_logits[k] * h[j];
                }
            }
            for j in 0..hid {
                if dh[j] == 0.0 {
                    continue;
                }
                db1[j] += dh[j];
                for (acc, v) in dw1[j * d..(j + 1) * d].iter_mut().zip(x) {
                    *acc += dh[j] * v;
                }
            }
        }
        if let Some(dx) = d_input {
            let (w1, _, _, _) = self.split();
            dx.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..hid {
                if dh[j] == 0.0 {
                    continue;
                }
                for (acc, a) in dx.iter_mut().zip(&w1[j * d..(j + 1) * d]) {
                    *acc += dh[j] * a;
                }
            }
        }
    }
}

/// A classifier checkpoint: one of the supported architectures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Model {
    LogReg(LogRegModel),
    Mlp(MlpModel),
}

/// Classifier architecture selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[value(name = "logreg")]
    LogReg,
    Mlp,
}

impl Model {
    pub fn new(kind: ModelKind, n_inputs: usize, n_classes: usize, rng: &mut Rng) -> Self {
        match kind {
            ModelKind::LogReg => Model::LogReg(LogRegModel::zeros(n_inputs, n_classes)),
            ModelKind::Mlp => Model::Mlp(MlpModel::new(n_inputs, MlpModel::DEFAULT_HIDDEN, n_classes, rng)),
        }
    }

    fn inner(&self) -> &dyn Classifier {
        match self {
            Model::LogReg(m) => m,
            Model::Mlp(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Classifier {
        match self {
            Model::LogReg(m) => m,
            Model::Mlp(m) => m,
        }
    }

    /// FNV-1a over the bit patterns of every parameter.
    pub fn checksum(&self) -> u64 {
        self.params().iter().fold(0xcbf2_9ce4_8422_2325u64, |h, v| {
            v.to_bits()
                .to_le_bytes()
                .iter()
                .fold(h, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
        })
    }
}

impl Classifier for Model {
    fn n_inputs(&self) -> usize {
        self.inner().n_inputs()
    }
    fn n_classes(&self) -> usize {
        self.inner().n_classes()
    }
    fn params(&self) -> &[f64] {
        self.inner().params()
    }
    fn params_mut(&mut self) -> &mut [f64] {
        self.inner_mut().params_mut()
    }
    fn forward(&self, x: &[f64], logits: &mut [f64]) {
        self.inner().forward(x, logits)
    }
    fn backward(&self, x: &[f64], d_logits: &[f64], d_params: Option<&mut [f64]>, d_input: Option<&mut [f64]>) {
        self.inner().backward(x, d_logits, d_params, d_input)
    }
}

/// Logits for a batch of flattened inputs, `G` per item.
pub fn forward_logits<C: Classifier + ?Sized>(model: &C, batch: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    batch
        .iter()
        .map(|x| {
            if x.len() != model.n_inputs() {
                return Err(Error::Dimension {
                    expected: model.n_inputs(),
                    got: x.len(),
                });
            }
            let mut out = vec![0.0; model.n_classes()];
            model.forward(x, &mut out);
            Ok(out)
        })
        .collect()
}

/// Index of the largest logit; ties go to the smallest index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = k;
        }
    }
    best
}

/// Cross-entropy of one item, and `softmax - onehot` written into `grad`.
pub fn cross_entropy_item(logits: &[f64], label: usize, grad: &mut [f64]) -> Result<f64> {
    let g = logits.len();
    if label >= g {
        return Err(Error::LabelOutOfRange { label, classes: g });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (out, &l) in grad.iter_mut().zip(logits) {
        *out = (l - max).exp();
        z += *out;
    }
    for v in grad.iter_mut() {
        *v /= z;
    }
    grad[label] -= 1.0;
    Ok(z.ln() + max - logits[label])
}

/// Summed (not averaged) cross-entropy over a batch, with its gradient with
/// respect to the logits.
pub fn cross_entropy_sum(logits: &[Vec<f64>], labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    if logits.len() != labels.len() {
        return Err(Error::Dimension {
            expected: logits.len(),
            got: labels.len(),
        });
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (l, &y) in logits.iter().zip(labels) {
        let mut g = vec![0.0; l.len()];
        loss += cross_entropy_item(l, y, &mut g)?;
        grads.push(g);
    }
    Ok((loss, grads))
}

/// Channel dropout on classifier inputs, inverted scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputDropout {
    pub p: f64,
    pub training: bool,
}

impl InputDropout {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("dropout p must lie in [0, 1), got {p}")));
        }
        Ok(InputDropout { p, training: true })
    }

    pub fn eval(mut self) -> Self {
        self.training = false;
        self
    }

    /// Zeroes each entry with probability `p` and scales survivors by
    /// `1 / (1 - p)`. Identity in evaluation mode or when `p == 0`.
    pub fn apply(&self, x: &mut [f64], rng: &mut Rng) {
        if !self.training || self.p == 0.0 {
            return;
        }
        let scale = 1.0 / (1.0 - self.p);
        for v in x.iter_mut() {
            if rng.gen::<f64>() < self.p {
                *v = 0.0;
            } else {
                *v *= scale;
            }
        }
    }
}

/// Functional form of [`InputDropout::apply`].
pub fn input_dropout(batch: &[Vec<f64>], p: f64, training: bool, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    let mut d = InputDropout::new(p)?;
    d.training = training;
    Ok(batch
        .iter()
        .map(|x| {
            let mut x = x.clone();
            d.apply(&mut x, rng);
            x
        })
        .collect())
}

/// Bias-corrected Adam moments for a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        self.step_masked(params, grads, lr, None)
    }

    /// Adam update that skips entries whose `trainable` flag is false,
    /// leaving both the parameter and its moments untouched.
    pub fn step_masked(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        lr: f64,
        trainable: Option<&[bool]>,
    ) -> Result<()> {
        let n = self.m.len();
        for len in [params.len(), grads.len(), trainable.map_or(n, <[bool]>::len)] {
            if len != n {
                return Err(Error::Dimension { expected: n, got: len });
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powf(self.step as f64);
        let bc2 = 1.0 - self.beta2.powf(self.step as f64);
        for i in 0..n {
            if trainable.is_some_and(|t| !t[i]) {
                continue;
            }
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    state.step(params, grads, lr)
}

/// Linear warm-up from 1% to 100% of `base_lr` over the first epoch, then constant.
pub fn warmup_lr(iter: usize, iters_in_first_epoch: usize, base_lr: f64) -> f64 {
    let total = iters_in_first_epoch.max(1);
    if iter >= total {
        return base_lr;
    }
    let frac = iter as f64 / total as f64;
    base_lr * (0.01 + 0.99 * frac)
}

/// Optimization hyperparameters shared by training and adaptation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_p: f64,
    pub warmup: bool,
    /// Adaptation runs `epochs * adapt_epoch_factor` epochs.
    pub adapt_epoch_factor: usize,
    pub model: ModelKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.05,
            batch_size: 1024,
            epochs: 2,
            dropout_p: 0.5,
            warmup: true,
            adapt_epoch_factor: 10,
            model: ModelKind::LogReg,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::InvalidParameter(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidParameter(format!(
                "dropout_p must lie in [0, 1), got {}",
                self.dropout_p
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidParameter("batch_size and epochs must be positive".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, iter: usize, iters_per_epoch: usize) -> f64 {
        if self.warmup {
            warmup_lr(iter, iters_per_epoch, self.base_lr)
        } else {
            self.base_lr
        }
    }
}
