//! Majority-vote ensemble and the per-model confidence measure.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Label};
use crate::error::{Error, Result};
use crate::models::{ScorePair, TrainedModel};
use crate::vectorizer::{FeatureVector, Featurized, Featurizer};

/// `max(v0, v1) - 0.5`, in `[0, 0.5]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Confidence(f64);

impl Confidence {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Confidence of a continuous score pair.
pub fn confidence(s: ScorePair) -> Confidence {
    Confidence((s.v0.max(s.v1) - 0.5).clamp(0.0, 0.5))
}

/// Confidence of a model's output, or `None` for hard-output models.
pub fn model_confidence(model: &TrainedModel, s: ScorePair) -> Option<Confidence> {
    model.continuous_output().then(|| confidence(s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVote {
    pub model: String,
    pub label: Label,
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub id: String,
    pub label: Label,
    pub votes_cyber: usize,
    pub votes_total: usize,
    pub per_model: Vec<ModelVote>,
    /// Usable tokens in the document. Zero means nothing could be scored.
    pub tokens: usize,
    /// Mean of the available per-model confidences.
    pub mean_confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Verdict {
    pub fn untokenizable(&self) -> bool {
        self.tokens == 0
    }

    fn fallback(id: &str, tokens: usize, error: Option<String>) -> Self {
        Verdict {
            id: id.to_string(),
            label: Label::Noncyber,
            votes_cyber: 0,
            votes_total: 0,
            per_model: Vec::new(),
            tokens,
            mean_confidence: None,
            error,
        }
    }
}

/// Cyber iff strictly more than half of the votes are cyber.
pub fn majority(votes_cyber: usize, votes_total: usize) -> Label {
    if 2 * votes_cyber > votes_total {
        Label::Cyber
    } else {
        Label::Noncyber
    }
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    featurizer: Featurizer,
    models: Vec<TrainedModel>,
}

impl Ensemble {
    pub fn new(featurizer: Featurizer, models: Vec<TrainedModel>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::InvalidArgument("ensemble needs at least one model".into()));
        }
        if let Some(m) = models.iter().find(|m| m.dim != featurizer.dim()) {
            return Err(Error::DimensionMismatch {
                expected: featurizer.dim(),
                actual: m.dim,
            });
        }
        Ok(Ensemble { featurizer, models })
    }

    pub fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    pub fn models(&self) -> &[TrainedModel] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn vote(&self, doc: &Document) -> Verdict {
        let f = self.featurizer.featurize(&doc.text());
        if f.tokens == 0 {
            return Verdict::fallback(&doc.id, 0, None);
        }
        match self.vote_vector(&doc.id, &f.vector, f.tokens) {
            Ok(v) => v,
            Err(e) => Verdict::fallback(&doc.id, f.tokens, Some(e.to_string())),
        }
    }

    /// Votes on an already vectorized document.
    pub fn vote_vector(&self, id: &str, v: &FeatureVector, tokens: usize) -> Result<Verdict> {
        let scores = self
            .models
            .iter()
            .map(|m| m.score(v))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.tally(id, tokens, &scores))
    }

    fn tally(&self, id: &str, tokens: usize, scores: &[ScorePair]) -> Verdict {
        let per_model: Vec<ModelVote> = self
            .models
            .iter()
            .zip(scores)
            .map(|(m, &s)| ModelVote {
                model: m.id(),
                label: s.label(),
                confidence: model_confidence(m, s).map(Confidence::value),
            })
            .collect();
        let votes_cyber = per_model.iter().filter(|p| p.label == Label::Cyber).count();
        let confs: Vec<f64> = per_model.iter().filter_map(|p| p.confidence).collect();
        let mean_confidence = (!confs.is_empty()).then(|| confs.iter().sum::<f64>() / confs.len() as f64);
        Verdict {
            id: id.to_string(),
            label: majority(votes_cyber, per_model.len()),
            votes_cyber,
            votes_total: per_model.len(),
            per_model,
            tokens,
            mean_confidence,
            error: None,
        }
    }

    /// Batched [`Ensemble::vote_vector`]: each model scores all vectors at
    /// once. Items are `(id, vector, usable token count)`.
    pub fn vote_vectors(&self, items: &[(&str, &FeatureVector, usize)]) -> Result<Vec<Verdict>> {
        let vs: Vec<&FeatureVector> = items.iter().map(|it| it.1).collect();
        let columns = self
            .models
            .par_iter()
            .map(|m| m.score_batch(&vs))
            .collect::<Result<Vec<_>>>()?;
        Ok(items
            .iter()
            .enumerate()
            .map(|(k, &(id, _, tokens))| {
                let scores: Vec<ScorePair> = columns.iter().map(|c| c[k]).collect();
                self.tally(id, tokens, &scores)
            })
            .collect())
    }

    /// Same verdicts as mapping [`Ensemble::vote`] over `docs`, in order.
    pub fn vote_batch(&self, docs: &[Document]) -> Vec<Verdict> {
        let feats: Vec<Featurized> = docs.par_iter().map(|d| self.featurizer.featurize(&d.text())).collect();
        let scorable: Vec<usize> = (0..docs.len()).filter(|&i| feats[i].tokens > 0).collect();
        let items: Vec<(&str, &FeatureVector, usize)> = scorable
            .iter()
            .map(|&i| (docs[i].id.as_str(), &feats[i].vector, feats[i].tokens))
            .collect();
        let mut verdicts: Vec<Option<Verdict>> = vec![None; docs.len()];
        if let Ok(bulk) = self.vote_vectors(&items) {
            for (i, v) in scorable.into_iter().zip(bulk) {
                verdicts[i] = Some(v);
            }
        }
        // Untokenizable documents, or all of them if the bulk pass failed,
        // go through the single-document path.
        docs.par_iter()
            .zip(verdicts.into_par_iter())
            .map(|(d, v)| v.unwrap_or_else(|| self.vote(d)))
            .collect()
    }
}
