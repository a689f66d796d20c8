//! TF-IDF over a fixed dictionary.
//!
//! Fitting on the dictionary itself treats each word as a one-word document,
//! so every word has document frequency 1 and the smoothed IDF
//! `ln((1 + n) / (1 + df)) + 1` is the same for all of them. The transform is
//! then L2-normalized term frequency; the IDF only matters when fitting on a
//! corpus instead ([`TfIdfModel::fit_on_corpus`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textprep::{clean, tokenize, Dictionary, TokenStream};

#[derive(Debug, Clone, PartialEq)]
pub struct TfIdfModel {
    idf: Vec<f32>,
}

impl TfIdfModel {
    /// Fits the IDF on the dictionary's own word list.
    pub fn fit_to_dictionary(dict: &Dictionary) -> Result<Self> {
        if dict.is_empty() {
            return Err(Error::EmptyDictionary);
        }
        let n = dict.len() as f64;
        let idf = (((1.0 + n) / 2.0).ln() + 1.0) as f32;
        Ok(TfIdfModel {
            idf: vec![idf; dict.len()],
        })
    }

    /// Fits the IDF on document frequencies of a training corpus.
    pub fn fit_on_corpus<'a>(dict: &Dictionary, docs: impl IntoIterator<Item = &'a TokenStream>) -> Result<Self> {
        if dict.is_empty() {
            return Err(Error::EmptyDictionary);
        }
        let mut df = vec![0u64; dict.len()];
        let mut n_docs = 0u64;
        let mut seen = vec![u64::MAX; dict.len()];
        for (d, tokens) in docs.into_iter().enumerate() {
            n_docs += 1;
            for &t in tokens.as_slice() {
                let t = t as usize;
                if seen[t] != d as u64 {
                    seen[t] = d as u64;
                    df[t] += 1;
                }
            }
        }
        let idf = df
            .iter()
            .map(|&f| (((1 + n_docs) as f64 / (1 + f) as f64).ln() + 1.0) as f32)
            .collect();
        Ok(TfIdfModel { idf })
    }

    /// Rebuilds a model from stored weights.
    pub fn from_idf(idf: Vec<f32>) -> Result<Self> {
        if idf.is_empty() {
            return Err(Error::EmptyDictionary);
        }
        if let Some(bad) = idf.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::Integrity(format!("idf weight {bad} is not positive")));
        }
        Ok(TfIdfModel { idf })
    }

    pub fn idf(&self) -> &[f32] {
        &self.idf
    }

    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    /// Count-times-IDF weights, L2-normalized and rounded to 32 bits.
    pub fn transform(&self, tokens: &TokenStream) -> FeatureVector {
        let mut sorted = tokens.as_slice().to_vec();
        sorted.sort_unstable();
        let mut indices = Vec::new();
        let mut raw: Vec<f64> = Vec::new();
        for run in sorted.chunk_by(|a, b| a == b) {
            indices.push(run[0]);
            raw.push(run.len() as f64 * self.idf[run[0] as usize] as f64);
        }
        let norm = raw.iter().map(|w| w * w).sum::<f64>().sqrt();
        let values = raw.iter().map(|w| (w / norm) as f32).collect();
        FeatureVector {
            dim: self.dim(),
            indices,
            values,
        }
    }
}

/// Sparse non-negative vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f32>,
}

impl FeatureVector {
    pub fn new(dim: usize, mut pairs: Vec<(u32, f32)>) -> Result<Self> {
        pairs.sort_by_key(|p| p.0);
        for w in pairs.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidArgument(format!("duplicate index {}", w[0].0)));
            }
        }
        if let Some(&(i, _)) = pairs.iter().find(|p| p.0 as usize >= dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: i as usize + 1,
            });
        }
        if let Some(&(i, v)) = pairs.iter().find(|p| !(p.1.is_finite() && p.1 >= 0.0)) {
            return Err(Error::InvalidArgument(format!("weight {v} at index {i} is not a non-negative finite value")));
        }
        pairs.retain(|p| p.1 != 0.0);
        let (indices, values) = pairs.into_iter().unzip();
        Ok(FeatureVector { dim, indices, values })
    }

    pub fn from_dense(dense: &[f32]) -> Self {
        let (indices, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i as u32, *v))
            .unzip();
        FeatureVector {
            dim: dense.len(),
            indices,
            values,
        }
    }

    pub fn empty(dim: usize) -> Self {
        FeatureVector {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f32)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    /// Value at `index`, zero when not stored.
    pub fn get(&self, index: u32) -> f32 {
        match self.indices.binary_search(&index) {
            Ok(pos) => self.values[pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i as usize] = v;
        }
        out
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt()
    }

    pub fn dot(&self, dense: &[f32]) -> f64 {
        self.iter().map(|(i, v)| v as f64 * dense[i as usize] as f64).sum()
    }
}

/// Dictionary plus TF-IDF model: raw text in, feature vector out.
#[derive(Debug, Clone)]
pub struct Featurizer {
    dictionary: Dictionary,
    tfidf: TfIdfModel,
}

/// A featurized document.
#[derive(Debug, Clone, PartialEq)]
pub struct Featurized {
    pub tokens: usize,
    pub vector: FeatureVector,
}

impl Featurizer {
    pub fn new(dictionary: Dictionary) -> Result<Self> {
        let tfidf = TfIdfModel::fit_to_dictionary(&dictionary)?;
        Ok(Featurizer { dictionary, tfidf })
    }

    pub fn with_model(dictionary: Dictionary, tfidf: TfIdfModel) -> Result<Self> {
        if tfidf.dim() != dictionary.len() {
            return Err(Error::DimensionMismatch {
                expected: dictionary.len(),
                actual: tfidf.dim(),
            });
        }
        Ok(Featurizer { dictionary, tfidf })
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dictionary
    }

    pub fn tfidf(&self) -> &TfIdfModel {
        &self.tfidf
    }

    pub fn dim(&self) -> usize {
        self.dictionary.len()
    }

    pub fn tokens(&self, raw: &str) -> TokenStream {
        tokenize(&clean(raw), &self.dictionary)
    }

    pub fn featurize(&self, raw: &str) -> Featurized {
        let tokens = self.tokens(raw);
        Featurized {
            tokens: tokens.len(),
            vector: self.tfidf.transform(&tokens),
        }
    }
}
