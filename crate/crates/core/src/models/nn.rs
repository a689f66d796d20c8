//! Fully connected ReLU networks with a two-way softmax head, trained on
//! class-weighted cross-entropy with Adam.
//!
//! The first layer consumes sparse feature vectors directly; later layers are
//! dense matrix products. Networks are generic over the float type so the
//! analytic gradients can be checked in `f64`; trained models are `f32`.

use std::fmt::Debug;

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive};
use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Example, ScorePair};
use crate::vectorizer::FeatureVector;

pub trait Real: Float + FromPrimitive + LinalgScalar + ScalarOperand + Debug + Send + Sync + 'static {}

impl Real for f32 {}
impl Real for f64 {}

fn lit<F: Real>(x: f64) -> F {
    F::from_f64(x).expect("representable constant")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Minimum loss improvement that resets the patience counter.
    pub tol: f64,
    pub patience: usize,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams {
            hidden: vec![100],
            learning_rate: 1e-3,
            max_epochs: 200,
            batch_size: 200,
            tol: 1e-4,
            patience: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnnParams {
    pub hidden: Vec<usize>,
    /// Training stops after the first epoch whose accuracy reaches this.
    pub accuracy_threshold: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
}

impl DnnParams {
    pub fn with_threshold(accuracy_threshold: f64) -> Self {
        DnnParams {
            hidden: vec![10_000, 1_000, 100],
            accuracy_threshold,
            batch_size: 4_000,
            learning_rate: 1e-3,
            max_epochs: 500,
        }
    }
}

/// Dense layer; `weight` is `inputs x outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

/// ReLU on every hidden layer, softmax on the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<F> {
    layers: Vec<Layer<F>>,
}

/// Activations kept for the backward pass.
pub struct Forward<F> {
    /// Post-ReLU output of each hidden layer.
    pub hidden: Vec<Array2<F>>,
    /// Output pre-activations, `batch x 2`.
    pub logits: Array2<F>,
    pub probs: Array2<F>,
}

pub struct Gradients<F> {
    pub layers: Vec<Layer<F>>,
}

impl<F: Real> Network<F> {
    /// Glorot-uniform weights and zero biases. `widths` runs from the input
    /// dimension to the output dimension.
    pub fn glorot(widths: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit);
                let weight = Array2::from_shape_simple_fn((w[0], w[1]), || lit::<F>(dist.sample(rng)));
                Layer {
                    weight,
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Network { layers }
    }

    pub fn zeros(widths: &[usize]) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| Layer {
                weight: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Network { layers }
    }

    pub fn from_layers(layers: Vec<Layer<F>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Integrity("network has no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weight.ncols() {
                return Err(Error::Integrity(format!("layer {i}: bias length does not match weight columns")));
            }
            if i > 0 && layers[i - 1].weight.ncols() != l.weight.nrows() {
                return Err(Error::Integrity(format!("layer {i}: input width does not match previous layer")));
            }
        }
        if layers.last().is_some_and(|l| l.weight.ncols() != 2) {
            return Err(Error::Integrity("output layer must have 2 units".into()));
        }
        Ok(Network { layers })
    }

    pub fn layers(&self) -> &[Layer<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<F>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    /// Input, hidden and output widths.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.weight.ncols()))
            .collect()
    }

    pub fn forward(&self, batch: &[&FeatureVector]) -> Result<Forward<F>> {
        let first = &self.layers[0];
        let mut z = Array2::<F>::zeros((batch.len(), first.weight.ncols()));
        for (mut row, x) in z.axis_iter_mut(Axis(0)).zip(batch) {
            row.assign(&first.bias);
            for (j, v) in x.iter() {
                row.scaled_add(lit::<F>(v as f64), &first.weight.row(j as usize));
            }
        }
        let mut hidden = Vec::with_capacity(self.layers.len() - 1);
        for layer in &self.layers[1..] {
            z.mapv_inplace(|v| v.max(F::zero()));
            let next = z.dot(&layer.weight) + &layer.bias;
            hidden.push(std::mem::replace(&mut z, next));
        }
        let logits = z;
        let mut probs = logits.clone();
        for mut row in probs.axis_iter_mut(Axis(0)) {
            let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged);
        }
        Ok(Forward { hidden, logits, probs })
    }

    /// Mean over the batch of `weight_i * -ln p(label_i)`.
    pub fn loss(&self, fwd: &Forward<F>, labels: &[usize], weights: &[F]) -> F {
        let n = lit::<F>(labels.len() as f64);
        let mut total = F::zero();
        for (r, (&y, &w)) in labels.iter().zip(weights).enumerate() {
            let row = fwd.logits.row(r);
            let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
            let lse = max + row.mapv(|v| (v - max).exp()).sum().ln();
            total = total + w * (lse - row[y]);
        }
        total / n
    }

    /// Exact gradients of [`Network::loss`] with respect to every parameter.
    pub fn backward(&self, batch: &[&FeatureVector], fwd: &Forward<F>, labels: &[usize], weights: &[F]) -> Gradients<F> {
        let n = lit::<F>(batch.len() as f64);
        let mut dz = fwd.probs.clone();
        for (r, (&y, &w)) in labels.iter().zip(weights).enumerate() {
            dz[[r, y]] = dz[[r, y]] - F::one();
            let scale = w / n;
            dz.row_mut(r).mapv_inplace(|v| v * scale);
        }
        let mut grads: Vec<Layer<F>> = Vec::with_capacity(self.layers.len());
        for l in (1..self.layers.len()).rev() {
            let input: ArrayView2<F> = fwd.hidden[l - 1].view();
            let weight = input.t().dot(&dz);
            let bias = dz.sum_axis(Axis(0));
            let mut da = dz.dot(&self.layers[l].weight.t());
            Zip::from(&mut da).and(&input).for_each(|d, &a| {
                if a <= F::zero() {
                    *d = F::zero();
                }
            });
            grads.push(Layer { weight, bias });
            dz = da;
        }
        let first = &self.layers[0];
        let mut weight = Array2::<F>::zeros(first.weight.raw_dim());
        for (x, g) in batch.iter().zip(dz.axis_iter(Axis(0))) {
            for (j, v) in x.iter() {
                weight.row_mut(j as usize).scaled_add(lit::<F>(v as f64), &g);
            }
        }
        grads.push(Layer {
            weight,
            bias: dz.sum_axis(Axis(0)),
        });
        grads.reverse();
        Gradients { layers: grads }
    }

    /// Flat view of all parameters, layer by layer (weights then bias).
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut F> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }
}

impl<F: Real> Gradients<F> {
    pub fn flat(&self) -> impl Iterator<Item = &F> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }
}

impl Network<f32> {
    /// Scores one vector. The pair is computed in `f64` from the logits so
    /// that `v0 + v1 == 1` up to rounding.
    pub fn score(&self, v: &FeatureVector) -> Result<ScorePair> {
        Ok(self.score_batch(&[v])?[0])
    }

    pub fn score_batch(&self, batch: &[&FeatureVector]) -> Result<Vec<ScorePair>> {
        let fwd = self.forward(batch)?;
        Ok(fwd
            .logits
            .axis_iter(Axis(0))
            .map(|z| {
                let (z0, z1) = (z[0] as f64, z[1] as f64);
                ScorePair::new(super::linear::sigmoid(z0 - z1), super::linear::sigmoid(z1 - z0))
            })
            .collect())
    }
}

/// Adam with bias correction.
pub struct Adam<F> {
    lr: F,
    beta1: F,
    beta2: F,
    eps: F,
    t: i32,
    m: Vec<Layer<F>>,
    v: Vec<Layer<F>>,
}

impl<F: Real> Adam<F> {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPSILON: f64 = 1e-8;

    pub fn new(net: &Network<F>, lr: f64) -> Self {
        let zeros = || {
            net.layers
                .iter()
                .map(|l| Layer {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect::<Vec<_>>()
        };
        Adam {
            lr: lit(lr),
            beta1: lit(Self::BETA1),
            beta2: lit(Self::BETA2),
            eps: lit(Self::EPSILON),
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, net: &mut Network<F>, grads: &Gradients<F>) {
        self.t += 1;
        let one = F::one();
        let c1 = one - self.beta1.powi(self.t);
        let c2 = one - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let update = |p: &mut F, g: &F, m: &mut F, v: &mut F| {
            *m = b1 * *m + (one - b1) * *g;
            *v = b2 * *v + (one - b2) * *g * *g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (((layer, g), m), v) in net.layers.iter_mut().zip(&grads.layers).zip(&mut self.m).zip(&mut self.v) {
            Zip::from(&mut layer.weight)
                .and(&g.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .for_each(update);
            Zip::from(&mut layer.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(update);
        }
    }
}

fn widths_for(dim: usize, hidden: &[usize]) -> Vec<usize> {
    std::iter::once(dim).chain(hidden.iter().copied()).chain([2]).collect()
}

struct EpochStats {
    loss: f64,
    accuracy: f64,
}

/// One shuffled pass of minibatch Adam. Accuracy counts the predictions made
/// on each batch before its update.
fn run_epoch(
    net: &mut Network<f32>,
    adam: &mut Adam<f32>,
    data: &[Example],
    weights: &[f32],
    order: &[usize],
    batch_size: usize,
) -> Result<EpochStats> {
    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    for chunk in order.chunks(batch_size) {
        let batch: Vec<&FeatureVector> = chunk.iter().map(|&i| &data[i].vector).collect();
        let labels: Vec<usize> = chunk.iter().map(|&i| data[i].label.index()).collect();
        let w: Vec<f32> = chunk.iter().map(|&i| weights[i]).collect();
        let fwd = net.forward(&batch)?;
        for (row, &y) in fwd.probs.axis_iter(Axis(0)).zip(&labels) {
            let pred = usize::from(row[1] > row[0]);
            correct += usize::from(pred == y);
        }
        let loss = net.loss(&fwd, &labels, &w);
        if !loss.is_finite() {
            return Err(Error::Diverged);
        }
        loss_sum += loss as f64 * chunk.len() as f64;
        let grads = net.backward(&batch, &fwd, &labels, &w);
        adam.step(net, &grads);
    }
    Ok(EpochStats {
        loss: loss_sum / order.len() as f64,
        accuracy: correct as f64 / order.len() as f64,
    })
}

/// Minibatch Adam until the epoch loss stops improving by `tol` for
/// `patience` consecutive epochs, or `max_epochs`.
pub(crate) fn fit_mlp(data: &[Example], weights: &[f64], dim: usize, p: &MlpParams, seed: u64) -> Result<(Network<f32>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::<f32>::glorot(&widths_for(dim, &p.hidden), &mut rng);
    let mut adam = Adam::new(&net, p.learning_rate);
    let weights: Vec<f32> = weights.iter().map(|&w| w as f32).collect();
    let batch_size = p.batch_size.min(data.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut epochs = 0;
    for _ in 0..p.max_epochs {
        order.shuffle(&mut rng);
        let stats = run_epoch(&mut net, &mut adam, data, &weights, &order, batch_size)?;
        epochs += 1;
        if stats.loss > best - p.tol {
            stale += 1;
        } else {
            stale = 0;
        }
        best = best.min(stats.loss);
        if stale > p.patience {
            break;
        }
    }
    Ok((net, epochs))
}

/// Minibatch Adam until an epoch's accuracy reaches the threshold.
pub(crate) fn fit_dnn(data: &[Example], weights: &[f64], dim: usize, p: &DnnParams, seed: u64) -> Result<(Network<f32>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::<f32>::glorot(&widths_for(dim, &p.hidden), &mut rng);
    let mut adam = Adam::new(&net, p.learning_rate);
    let weights: Vec<f32> = weights.iter().map(|&w| w as f32).collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut best = 0.0f64;
    for epoch in 1..=p.max_epochs {
        order.shuffle(&mut rng);
        let stats = run_epoch(&mut net, &mut adam, data, &weights, &order, p.batch_size)?;
        best = best.max(stats.accuracy);
        if stats.accuracy >= p.accuracy_threshold {
            return Ok((net, epoch));
        }
    }
    Err(Error::NotConverged {
        threshold: p.accuracy_threshold,
        epochs: p.max_epochs,
        best_accuracy: best,
    })
}
