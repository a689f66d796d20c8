//! Cybersecurity topic classification.
//!
//! The pipeline runs raw documents through [`textprep`] (cleaning and
//! fixed-dictionary tokenization), [`vectorizer`] (TF-IDF over that
//! dictionary) and into any of the seven classifier configurations in
//! [`models`]. An [`ensemble::Ensemble`] of 21 trained models (seven
//! configurations times three training sources) labels a document by strict
//! majority vote. [`eval`] holds the measurement harness: FN/FP rates,
//! cross-source validation, token-length sweeps, confidence binning and
//! throughput benchmarking. [`persist`] reads and writes the on-disk model
//! containers and ensemble manifests.

pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod models;
pub mod persist;
pub mod synthetic;
pub mod textprep;
pub mod vectorizer;

pub use corpus::{ClassBalance, Document, Label, Source};
pub use ensemble::{Ensemble, Verdict};
pub use error::{Error, Result};
pub use models::{Example, ModelConfig, ScorePair, TrainedModel};
pub use textprep::Dictionary;
pub use vectorizer::{FeatureVector, Featurizer, TfIdfModel};
