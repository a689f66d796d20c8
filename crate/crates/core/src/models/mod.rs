//! The seven classifier configurations behind one train/score interface.
//!
//! | name            | family                         | output     |
//! |-----------------|--------------------------------|------------|
//! | `decision_tree` | CART, weighted Gini, depth 100 | leaf class proportions |
//! | `random_forest` | 100 bootstrap trees, sqrt(d) features per split | vote fraction |
//! | `logistic`      | L2 logistic regression, full-batch GD | sigmoid |
//! | `linear_svm`    | L2 hinge loss, Pegasos subgradient | hard {0,1} |
//! | `mlp`           | one hidden layer of 100 ReLU units, Adam | softmax |
//! | `dnn-0.95`, `dnn-0.99` | ReLU stack trained until an epoch reaches the accuracy threshold | softmax |
//!
//! Class weights from [`ClassBalance`] multiply each sample's loss (linear
//! models, networks) or count (trees).

pub mod linear;
pub mod nn;
pub mod tree;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{ClassBalance, Label, Source};
use crate::error::{Error, Result};
use crate::vectorizer::FeatureVector;

pub use linear::{LinearModel, LogisticParams, SvmParams};
pub use nn::{DnnParams, MlpParams, Network};
pub use tree::{ForestParams, Tree, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    DecisionTree,
    RandomForest,
    Logistic,
    LinearSvm,
    Mlp,
    Dnn,
}

/// A classifier family plus its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelConfig {
    DecisionTree(TreeParams),
    RandomForest(ForestParams),
    Logistic(LogisticParams),
    LinearSvm(SvmParams),
    Mlp(MlpParams),
    Dnn(DnnParams),
}

impl ModelConfig {
    /// The seven configurations, in table order.
    pub fn canonical() -> Vec<ModelConfig> {
        vec![
            ModelConfig::DecisionTree(TreeParams::default()),
            ModelConfig::RandomForest(ForestParams::default()),
            ModelConfig::Logistic(LogisticParams::default()),
            ModelConfig::LinearSvm(SvmParams::default()),
            ModelConfig::Mlp(MlpParams::default()),
            ModelConfig::Dnn(DnnParams::with_threshold(0.95)),
            ModelConfig::Dnn(DnnParams::with_threshold(0.99)),
        ]
    }

    pub fn family(&self) -> Family {
        match self {
            ModelConfig::DecisionTree(_) => Family::DecisionTree,
            ModelConfig::RandomForest(_) => Family::RandomForest,
            ModelConfig::Logistic(_) => Family::Logistic,
            ModelConfig::LinearSvm(_) => Family::LinearSvm,
            ModelConfig::Mlp(_) => Family::Mlp,
            ModelConfig::Dnn(_) => Family::Dnn,
        }
    }

    /// Short configuration name, e.g. `logistic` or `dnn-0.99`.
    pub fn name(&self) -> String {
        match self {
            ModelConfig::DecisionTree(_) => "decision_tree".into(),
            ModelConfig::RandomForest(_) => "random_forest".into(),
            ModelConfig::Logistic(_) => "logistic".into(),
            ModelConfig::LinearSvm(_) => "linear_svm".into(),
            ModelConfig::Mlp(_) => "mlp".into(),
            ModelConfig::Dnn(p) => format!("dnn-{}", p.accuracy_threshold),
        }
    }

    pub fn continuous_output(&self) -> bool {
        !matches!(self, ModelConfig::LinearSvm(_))
    }

    /// Replaces the hidden layer widths of network configurations.
    pub fn with_hidden(self, hidden: &[usize]) -> Self {
        match self {
            ModelConfig::Mlp(mut p) => {
                p.hidden = hidden.to_vec();
                ModelConfig::Mlp(p)
            }
            ModelConfig::Dnn(mut p) => {
                p.hidden = hidden.to_vec();
                ModelConfig::Dnn(p)
            }
            other => other,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        match self {
            ModelConfig::DecisionTree(TreeParams { max_depth })
            | ModelConfig::RandomForest(ForestParams { max_depth, .. }) => {
                if *max_depth == Some(0) {
                    return bad("max_depth must be at least 1".into());
                }
            }
            ModelConfig::Dnn(p) => {
                if !(p.accuracy_threshold > 0.0 && p.accuracy_threshold <= 1.0) {
                    return bad(format!("dnn accuracy threshold {} not in (0, 1]", p.accuracy_threshold));
                }
                if p.hidden.contains(&0) || p.batch_size == 0 {
                    return bad("layer widths and batch size must be at least 1".into());
                }
            }
            ModelConfig::Mlp(p) => {
                if p.hidden.contains(&0) || p.batch_size == 0 {
                    return bad("layer widths and batch size must be at least 1".into());
                }
            }
            ModelConfig::Logistic(_) | ModelConfig::LinearSvm(_) => {}
        }
        if let ModelConfig::RandomForest(p) = self {
            if p.n_trees == 0 {
                return bad("random forest needs at least one tree".into());
            }
        }
        Ok(())
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for ModelConfig {
    type Err = Error;

    /// Accepts the configuration names plus `dnn` (threshold 0.95) and
    /// `dnn-<threshold>`.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "decision_tree" => ModelConfig::DecisionTree(TreeParams::default()),
            "random_forest" => ModelConfig::RandomForest(ForestParams::default()),
            "logistic" => ModelConfig::Logistic(LogisticParams::default()),
            "linear_svm" => ModelConfig::LinearSvm(SvmParams::default()),
            "mlp" => ModelConfig::Mlp(MlpParams::default()),
            "dnn" => ModelConfig::Dnn(DnnParams::with_threshold(0.95)),
            other => {
                let threshold = other
                    .strip_prefix("dnn-")
                    .and_then(|t| t.parse::<f64>().ok())
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown model family {other:?}")))?;
                let cfg = ModelConfig::Dnn(DnnParams::with_threshold(threshold));
                cfg.validate()?;
                cfg
            }
        })
    }
}

/// A feature vector with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub vector: FeatureVector,
    pub label: Label,
}

impl Example {
    pub fn new(vector: FeatureVector, label: Label) -> Self {
        Example { vector, label }
    }
}

/// Two-class output `[v0, v1]`: noncyber then cyber.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub v0: f64,
    pub v1: f64,
}

impl ScorePair {
    pub fn new(v0: f64, v1: f64) -> Self {
        ScorePair { v0, v1 }
    }

    /// Pair from a cyber probability.
    pub fn from_cyber(p: f64) -> Self {
        ScorePair { v0: 1.0 - p, v1: p }
    }

    pub fn hard(label: Label) -> Self {
        match label {
            Label::Cyber => ScorePair { v0: 0.0, v1: 1.0 },
            Label::Noncyber => ScorePair { v0: 1.0, v1: 0.0 },
        }
    }

    /// Cyber iff `v1 > v0`; exact ties go to noncyber.
    pub fn label(&self) -> Label {
        if self.v1 > self.v0 {
            Label::Cyber
        } else {
            Label::Noncyber
        }
    }
}

const SCORE_CHUNK: usize = 512;

/// Learned parameters, by family.
#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    Tree(Tree),
    Forest(Vec<Tree>),
    Linear(LinearModel),
    Network(Network<f32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub params: Params,
    pub dim: usize,
    pub training_accuracy: f64,
    pub source: Source,
    /// Training epochs or iterations actually run, where the family has them.
    pub epochs: Option<usize>,
}

impl TrainedModel {
    pub fn with_source(mut self, source: Source) -> Self {
        self.source = source;
        self
    }

    /// `<source>-<config name>`, e.g. `reddit-dnn-0.95`.
    pub fn id(&self) -> String {
        format!("{}-{}", self.source, self.config.name())
    }

    pub fn continuous_output(&self) -> bool {
        self.config.continuous_output()
    }

    pub fn score(&self, v: &FeatureVector) -> Result<ScorePair> {
        if v.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: v.dim(),
            });
        }
        Ok(match &self.params {
            Params::Tree(t) => {
                let [p0, p1] = t.leaf_value(v);
                ScorePair::new(p0 as f64, p1 as f64)
            }
            Params::Forest(trees) => {
                let votes = trees.iter().filter(|t| t.vote(v) == Label::Cyber).count();
                ScorePair::from_cyber(votes as f64 / trees.len() as f64)
            }
            Params::Linear(m) => {
                let z = m.decision(v);
                match self.config {
                    ModelConfig::LinearSvm(_) => ScorePair::hard(if z > 0.0 { Label::Cyber } else { Label::Noncyber }),
                    _ => ScorePair::from_cyber(linear::sigmoid(z)),
                }
            }
            Params::Network(net) => net.score(v)?,
        })
    }

    /// Scores many vectors; bit-identical to calling [`TrainedModel::score`]
    /// on each, but networks run whole batches through each layer.
    pub fn score_batch(&self, vs: &[&FeatureVector]) -> Result<Vec<ScorePair>> {
        if let Some(v) = vs.iter().find(|v| v.dim() != self.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: v.dim(),
            });
        }
        match &self.params {
            Params::Network(net) => {
                let mut out = Vec::with_capacity(vs.len());
                for chunk in vs.chunks(SCORE_CHUNK) {
                    out.extend(net.score_batch(chunk)?);
                }
                Ok(out)
            }
            _ => vs.iter().map(|v| self.score(v)).collect(),
        }
    }

    pub fn predict(&self, v: &FeatureVector) -> Result<Label> {
        Ok(self.score(v)?.label())
    }

    pub fn accuracy(&self, data: &[Example]) -> Result<f64> {
        if data.is_empty() {
            return Ok(0.0);
        }
        let vs: Vec<&FeatureVector> = data.iter().map(|ex| &ex.vector).collect();
        let correct = self
            .score_batch(&vs)?
            .iter()
            .zip(data)
            .filter(|(s, ex)| s.label() == ex.label)
            .count();
        Ok(correct as f64 / data.len() as f64)
    }
}

/// Trains one model. Deterministic for a fixed seed.
pub fn train(config: &ModelConfig, data: &[Example], balance: &ClassBalance, seed: u64) -> Result<TrainedModel> {
    config.validate()?;
    let dim = check_data(data)?;
    let weights: Vec<f64> = data.iter().map(|ex| balance.weight(ex.label)).collect();
    let (params, epochs) = match config {
        ModelConfig::DecisionTree(p) => (Params::Tree(tree::fit_tree(data, &weights, dim, p)), None),
        ModelConfig::RandomForest(p) => (Params::Forest(tree::fit_forest(data, &weights, dim, p, seed)), None),
        ModelConfig::Logistic(p) => {
            let fit = linear::fit_logistic(data, &weights, dim, p);
            let iters = fit.losses.len();
            (Params::Linear(fit.model), Some(iters))
        }
        ModelConfig::LinearSvm(p) => (Params::Linear(linear::fit_svm(data, &weights, dim, p, seed)), Some(p.epochs)),
        ModelConfig::Mlp(p) => {
            let (net, epochs) = nn::fit_mlp(data, &weights, dim, p, seed)?;
            (Params::Network(net), Some(epochs))
        }
        ModelConfig::Dnn(p) => {
            let (net, epochs) = nn::fit_dnn(data, &weights, dim, p, seed)?;
            (Params::Network(net), Some(epochs))
        }
    };
    let mut model = TrainedModel {
        config: config.clone(),
        params,
        dim,
        training_accuracy: 0.0,
        source: Source::Other("unknown".into()),
        epochs,
    };
    model.training_accuracy = model.accuracy(data)?;
    Ok(model)
}

fn check_data(data: &[Example]) -> Result<usize> {
    let first = data
        .first()
        .ok_or_else(|| Error::InvalidArgument("training data is empty".into()))?;
    let dim = first.vector.dim();
    let mut counts = [0usize; 2];
    for ex in data {
        if ex.vector.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: ex.vector.dim(),
            });
        }
        counts[ex.label.index()] += 1;
    }
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::SingleClass {
            cyber: counts[1],
            noncyber: counts[0],
        });
    }
    Ok(dim)
}
