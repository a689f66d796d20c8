//! Linear models on sparse features: L2 logistic regression trained by
//! full-batch gradient descent, and an L2 hinge-loss SVM trained by Pegasos
//! stochastic subgradient steps.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::models::Example;
use crate::vectorizer::FeatureVector;

/// `coef . x + intercept`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub coef: Vec<f32>,
    pub intercept: f32,
}

impl LinearModel {
    pub fn zeros(dim: usize) -> Self {
        LinearModel {
            coef: vec![0.0; dim],
            intercept: 0.0,
        }
    }

    pub fn decision(&self, x: &FeatureVector) -> f64 {
        x.dot(&self.coef) + self.intercept as f64
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub learning_rate: f64,
    pub max_iter: usize,
    /// Stop when the loss changes by less than this between iterations.
    pub tol: f64,
    /// L2 strength; `None` means `1 / n_samples`.
    pub l2: Option<f64>,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams {
            learning_rate: 0.5,
            max_iter: 1000,
            tol: 1e-6,
            l2: None,
        }
    }
}

pub struct LogisticFit {
    pub model: LinearModel,
    /// Training objective before each update.
    pub losses: Vec<f64>,
}

/// Minimizes `sum_i w_i * logloss_i / sum_i w_i + l2/2 * |coef|^2` (intercept
/// unpenalized) by fixed-step gradient descent.
///
/// With unit-norm inputs the objective's gradient is Lipschitz with constant
/// at most `0.5 + l2`, so the default step of 0.5 decreases the loss
/// monotonically.
pub fn fit_logistic(data: &[Example], weights: &[f64], dim: usize, params: &LogisticParams) -> LogisticFit {
    let n = data.len();
    let lambda = params.l2.unwrap_or(1.0 / n as f64);
    let total_w: f64 = weights.iter().sum();
    let mut coef = vec![0.0f64; dim];
    let mut intercept = 0.0f64;
    let mut losses: Vec<f64> = Vec::new();
    let mut grad = vec![0.0f64; dim];
    for _ in 0..params.max_iter {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        let mut loss = 0.0;
        for (ex, &w) in data.iter().zip(weights) {
            let z: f64 = ex.vector.iter().map(|(i, v)| v as f64 * coef[i as usize]).sum::<f64>() + intercept;
            let target = if ex.label == Label::Cyber { 1.0 } else { 0.0 };
            // -log p(y) = softplus(-z) for y = 1, softplus(z) for y = 0
            loss += w * if target == 1.0 { softplus(-z) } else { softplus(z) };
            let r = w * (sigmoid(z) - target) / total_w;
            for (i, v) in ex.vector.iter() {
                grad[i as usize] += r * v as f64;
            }
            grad_b += r;
        }
        let sq: f64 = coef.iter().map(|c| c * c).sum();
        let loss = loss / total_w + 0.5 * lambda * sq;
        if let Some(&prev) = losses.last() {
            if (prev - loss).abs() < params.tol {
                losses.push(loss);
                break;
            }
        }
        losses.push(loss);
        for (c, g) in coef.iter_mut().zip(&grad) {
            *c -= params.learning_rate * (g + lambda * *c);
        }
        intercept -= params.learning_rate * grad_b;
    }
    LogisticFit {
        model: LinearModel {
            coef: coef.iter().map(|&c| c as f32).collect(),
            intercept: intercept as f32,
        },
        losses,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub epochs: usize,
    /// L2 strength; `None` means `1 / n_samples`.
    pub l2: Option<f64>,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams { epochs: 1000, l2: None }
    }
}

/// Pegasos on `l2/2 * |w|^2 + 1/n * sum_i c_i * max(0, 1 - y_i (w . x_i + b))`.
///
/// The bias is a constant feature of value 1 and is regularized along with
/// the weights. The weight vector is kept as `scale * v` so the shrink step
/// costs O(1) and each update touches only the sample's nonzeros.
pub fn fit_svm(data: &[Example], weights: &[f64], dim: usize, params: &SvmParams, seed: u64) -> LinearModel {
    let n = data.len();
    let lambda = params.l2.unwrap_or(1.0 / n as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = vec![0.0f64; dim + 1];
    let mut scale = 1.0f64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut t = 0u64;
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let ex = &data[i];
            let y = if ex.label == Label::Cyber { 1.0 } else { -1.0 };
            let raw: f64 = ex.vector.iter().map(|(j, x)| x as f64 * v[j as usize]).sum::<f64>() + v[dim];
            let margin = y * scale * raw;
            let shrink = 1.0 - eta * lambda;
            if shrink <= 0.0 {
                v.iter_mut().for_each(|x| *x = 0.0);
                scale = 1.0;
            } else {
                scale *= shrink;
            }
            if margin < 1.0 {
                let step = eta * weights[i] * y / scale;
                for (j, x) in ex.vector.iter() {
                    v[j as usize] += step * x as f64;
                }
                v[dim] += step;
            }
            if scale < 1e-9 {
                v.iter_mut().for_each(|x| *x *= scale);
                scale = 1.0;
            }
        }
    }
    LinearModel {
        coef: v[..dim].iter().map(|&x| (x * scale) as f32).collect(),
        intercept: (v[dim] * scale) as f32,
    }
}
