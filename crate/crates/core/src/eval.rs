//! Measurement harness: FN/FP rates, the cross-source validation matrix,
//! token-length sweeps, confidence binning and the throughput benchmark.
//!
//! Every report serializes to JSON and to CSV with plot-ready column names.
//! Undefined rates (no documents of the relevant class) are `null` in JSON
//! and empty fields in CSV.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{split_by, ClassBalance, Document, Fraction, Label, Source, SplitSpec};
use crate::ensemble::{confidence, Ensemble};
use crate::error::{Error, Result};
use crate::models::{train, Example, ModelConfig, ScorePair, TrainedModel};
use crate::vectorizer::{FeatureVector, Featurizer};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
    /// `fn / (fn + tp)`; `None` without true-cyber documents.
    pub fn_rate: Option<f64>,
    /// `fp / (fp + tn)`; `None` without true-noncyber documents.
    pub fp_rate: Option<f64>,
}

impl ErrorRates {
    pub fn from_counts(tp: usize, fn_: usize, fp: usize, tn: usize) -> Self {
        let ratio = |a: usize, b: usize| (a + b > 0).then(|| a as f64 / (a + b) as f64);
        ErrorRates {
            tp,
            fn_,
            fp,
            tn,
            fn_rate: ratio(fn_, tp),
            fp_rate: ratio(fp, tn),
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.fp + self.tn
    }

    /// Misclassified fraction over all documents.
    pub fn error_rate(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| (self.fn_ + self.fp) as f64 / n as f64)
    }

    /// Mean of the FN and FP rates, when both are defined.
    pub fn balanced_error(&self) -> Option<f64> {
        Some((self.fn_rate? + self.fp_rate?) / 2.0)
    }
}

/// Counts from `(truth, prediction)` pairs.
pub fn error_rates(pairs: impl IntoIterator<Item = (Label, Label)>) -> ErrorRates {
    let (mut tp, mut fn_, mut fp, mut tn) = (0, 0, 0, 0);
    for (truth, pred) in pairs {
        match (truth, pred) {
            (Label::Cyber, Label::Cyber) => tp += 1,
            (Label::Cyber, Label::Noncyber) => fn_ += 1,
            (Label::Noncyber, Label::Cyber) => fp += 1,
            (Label::Noncyber, Label::Noncyber) => tn += 1,
        }
    }
    ErrorRates::from_counts(tp, fn_, fp, tn)
}

/// A labeled document after cleaning, tokenization and vectorization.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub id: String,
    pub label: Label,
    pub tokens: usize,
    pub vector: FeatureVector,
}

impl Prepared {
    pub fn example(&self) -> Example {
        Example::new(self.vector.clone(), self.label)
    }
}

/// Vectorizes labeled documents; unlabeled ones are an error.
pub fn prepare(docs: &[Document], featurizer: &Featurizer) -> Result<Vec<Prepared>> {
    docs.par_iter()
        .map(|d| {
            let label = d
                .label
                .ok_or_else(|| Error::InvalidArgument(format!("document {:?} has no label", d.id)))?;
            let f = featurizer.featurize(&d.text());
            Ok(Prepared {
                id: d.id.clone(),
                label,
                tokens: f.tokens,
                vector: f.vector,
            })
        })
        .collect()
}

fn score_all(model: &TrainedModel, docs: &[Prepared]) -> Result<Vec<ScorePair>> {
    let vs: Vec<&FeatureVector> = docs.iter().map(|d| &d.vector).collect();
    model.score_batch(&vs)
}

pub fn evaluate(model: &TrainedModel, docs: &[Prepared]) -> Result<ErrorRates> {
    let scores = score_all(model, docs)?;
    Ok(error_rates(docs.iter().zip(scores).map(|(d, s)| (d.label, s.label()))))
}

fn examples(docs: &[Prepared]) -> Vec<Example> {
    docs.iter().map(Prepared::example).collect()
}

fn train_on(config: &ModelConfig, docs: &[Prepared], seed: u64) -> Result<TrainedModel> {
    let balance = ClassBalance::from_labels(docs.iter().map(|d| d.label))?;
    train(config, &examples(docs), &balance, seed)
}

/// All prepared documents of one source.
#[derive(Debug, Clone)]
pub struct SourceCorpus {
    pub source: Source,
    pub docs: Vec<Prepared>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValCell {
    pub family: String,
    pub train_source: String,
    pub validation_source: String,
    /// Present only on same-source cells.
    pub training_accuracy: Option<f64>,
    pub rates: Option<ErrorRates>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Serialize)]
struct CrossValCsvRow<'a> {
    family: &'a str,
    train_source: &'a str,
    validation_source: &'a str,
    training_accuracy: Option<f64>,
    fn_rate: Option<f64>,
    fp_rate: Option<f64>,
}

pub const CROSSVAL_COLUMNS: [&str; 6] = [
    "family",
    "train_source",
    "validation_source",
    "training_accuracy",
    "fn_rate",
    "fp_rate",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossValReport {
    pub seed: u64,
    pub train_fraction: Fraction,
    pub cells: Vec<CrossValCell>,
}

impl CrossValReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for c in &self.cells {
            w.serialize(CrossValCsvRow {
                family: &c.family,
                train_source: &c.train_source,
                validation_source: &c.validation_source,
                training_accuracy: c.training_accuracy,
                fn_rate: c.rates.and_then(|r| r.fn_rate),
                fp_rate: c.rates.and_then(|r| r.fp_rate),
            })?;
        }
        if self.cells.is_empty() {
            w.write_record(CROSSVAL_COLUMNS)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Cross-source validation output plus the models it trained.
pub struct CrossValRun {
    pub report: CrossValReport,
    /// One entry per (configuration, source), in configuration-major order.
    pub models: Vec<Result<TrainedModel>>,
    /// Held-out split of each source, in input order.
    pub held_out: Vec<Vec<Prepared>>,
}

/// Trains every configuration on every source's training split, then
/// evaluates each model on its own held-out split and on the full corpora of
/// all other sources.
pub fn cross_validate(corpora: &[SourceCorpus], configs: &[ModelConfig], split: SplitSpec) -> Result<CrossValRun> {
    if corpora.len() < 2 {
        return Err(Error::InvalidArgument("cross validation needs at least two sources".into()));
    }
    let mut splits = Vec::with_capacity(corpora.len());
    for c in corpora {
        splits.push(split_by(&c.docs, |d| Some(d.label), split)?);
    }
    let jobs: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|f| (0..corpora.len()).map(move |s| (f, s)))
        .collect();
    let results: Vec<(Result<TrainedModel>, Vec<CrossValCell>)> = jobs
        .par_iter()
        .map(|&(f, s)| {
            let config = &configs[f];
            let model = train_on(config, &splits[s].0, split.seed).map(|m| m.with_source(corpora[s].source.clone()));
            let mut cells = Vec::with_capacity(corpora.len());
            for (v, target) in corpora.iter().enumerate() {
                let same = v == s;
                let eval_docs: &[Prepared] = if same { &splits[s].1 } else { &target.docs };
                let mut cell = CrossValCell {
                    family: config.name(),
                    train_source: corpora[s].source.to_string(),
                    validation_source: target.source.to_string(),
                    training_accuracy: None,
                    rates: None,
                    error: None,
                };
                match &model {
                    Ok(m) => {
                        if same {
                            cell.training_accuracy = Some(m.training_accuracy);
                        }
                        match evaluate(m, eval_docs) {
                            Ok(r) => cell.rates = Some(r),
                            Err(e) => cell.error = Some(e.to_string()),
                        }
                    }
                    Err(e) => cell.error = Some(e.to_string()),
                }
                cells.push(cell);
            }
            (model, cells)
        })
        .collect();

    let mut cells = Vec::with_capacity(jobs.len() * corpora.len());
    let mut models = Vec::with_capacity(jobs.len());
    for (m, c) in results {
        models.push(m);
        cells.extend(c);
    }
    let family_rank = |name: &str| configs.iter().position(|c| c.name() == name);
    cells.sort_by(|a, b| {
        family_rank(&a.family)
            .cmp(&family_rank(&b.family))
            .then_with(|| a.train_source.cmp(&b.train_source))
            .then_with(|| a.validation_source.cmp(&b.validation_source))
    });
    Ok(CrossValRun {
        report: CrossValReport {
            seed: split.seed,
            train_fraction: split.train_fraction,
            cells,
        },
        models,
        held_out: splits.into_iter().map(|(_, v)| v).collect(),
    })
}

/// Per-class document counts for each side (train and validation) of a
/// sweep subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSize {
    pub cyber: usize,
    pub noncyber: usize,
}

impl SubsetSize {
    /// Per-side subset sizes used for the full-scale sweeps of each source.
    pub fn for_source(source: &Source) -> Option<SubsetSize> {
        match source {
            Source::Reddit => Some(SubsetSize {
                cyber: 40_000,
                noncyber: 50_000,
            }),
            Source::StackExchange => Some(SubsetSize {
                cyber: 20_581,
                noncyber: 50_000,
            }),
            Source::Arxiv => Some(SubsetSize {
                cyber: 1_000,
                noncyber: 3_000,
            }),
            Source::Other(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub min_tokens: usize,
    pub family: String,
    pub n_train: usize,
    pub n_validation: usize,
    pub rates: Option<ErrorRates>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

#[derive(Serialize)]
struct SweepCsvRow<'a> {
    min_tokens: usize,
    family: &'a str,
    n: usize,
    fn_rate: Option<f64>,
    fp_rate: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub seed: u64,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(SweepCsvRow {
                min_tokens: r.min_tokens,
                family: &r.family,
                n: r.n_validation,
                fn_rate: r.rates.and_then(|x| x.fn_rate),
                fp_rate: r.rates.and_then(|x| x.fp_rate),
            })?;
        }
        if self.rows.is_empty() {
            w.write_record(["min_tokens", "family", "n", "fn_rate", "fp_rate"])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Seed for one sweep row, distinct per minimum length.
fn row_seed(seed: u64, n: usize) -> u64 {
    seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// For each minimum token count N: keep documents with at least N usable
/// tokens, draw up to `2 * subset` documents per class, split them in half,
/// train every configuration on one half and validate on the other.
pub fn token_sweep(
    docs: &[Prepared],
    configs: &[ModelConfig],
    n_values: &[usize],
    subset: Option<SubsetSize>,
    seed: u64,
) -> Result<SweepReport> {
    if n_values.is_empty() || n_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "sweep minimum lengths must be nonempty and strictly ascending".into(),
        ));
    }
    let mut rows = Vec::new();
    for &n in n_values {
        let mut rng = ChaCha8Rng::seed_from_u64(row_seed(seed, n));
        let mut by_class: [Vec<&Prepared>; 2] = [Vec::new(), Vec::new()];
        for d in docs.iter().filter(|d| d.tokens >= n.max(1)) {
            by_class[d.label.index()].push(d);
        }
        let mut chosen: Vec<Prepared> = Vec::new();
        for (class, pool) in by_class.iter_mut().enumerate() {
            pool.shuffle(&mut rng);
            let cap = subset.map_or(usize::MAX, |s| 2 * if class == 1 { s.cyber } else { s.noncyber });
            chosen.extend(pool.iter().take(cap).map(|d| (*d).clone()));
        }
        let split = split_by(&chosen, |d| Some(d.label), SplitSpec::new(Fraction::HALF, row_seed(seed, n)));
        let (train_docs, val_docs) = match split {
            Ok(s) => s,
            Err(e) => {
                for c in configs {
                    rows.push(SweepRow {
                        min_tokens: n,
                        family: c.name(),
                        n_train: 0,
                        n_validation: 0,
                        rates: None,
                        skipped: Some(e.to_string()),
                    });
                }
                continue;
            }
        };
        debug_assert!(train_docs.iter().chain(&val_docs).all(|d| d.tokens >= n));
        let row_results: Vec<SweepRow> = configs
            .par_iter()
            .map(|c| {
                let mut row = SweepRow {
                    min_tokens: n,
                    family: c.name(),
                    n_train: train_docs.len(),
                    n_validation: val_docs.len(),
                    rates: None,
                    skipped: None,
                };
                match train_on(c, &train_docs, seed).and_then(|m| evaluate(&m, &val_docs)) {
                    Ok(r) => row.rates = Some(r),
                    Err(e) => row.skipped = Some(e.to_string()),
                }
                row
            })
            .collect();
        rows.extend(row_results);
    }
    Ok(SweepReport { seed, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBin {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
    pub rates: ErrorRates,
}

#[derive(Serialize)]
struct BinCsvRow {
    bin_lo: f64,
    bin_hi: f64,
    count: usize,
    fn_rate: Option<f64>,
    fp_rate: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfidenceBinReport {
    pub model: String,
    pub bins: Vec<ConfidenceBin>,
}

impl ConfidenceBinReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for b in &self.bins {
            w.serialize(BinCsvRow {
                bin_lo: b.bin_lo,
                bin_hi: b.bin_hi,
                count: b.count,
                fn_rate: b.rates.fn_rate,
                fp_rate: b.rates.fp_rate,
            })?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }
}

pub const DEFAULT_BINS: usize = 20;

/// Bins `(truth, score)` pairs into `n_bins` equal-width confidence bins
/// over `[0, 0.5]`; the last bin is closed on the right.
pub fn bin_scores(model: &str, scored: &[(Label, ScorePair)], n_bins: usize) -> Result<ConfidenceBinReport> {
    if n_bins == 0 {
        return Err(Error::InvalidArgument("need at least one confidence bin".into()));
    }
    let width = 0.5 / n_bins as f64;
    let mut pairs: Vec<Vec<(Label, Label)>> = vec![Vec::new(); n_bins];
    for &(truth, s) in scored {
        let c = confidence(s).value();
        let bin = ((c / width).floor() as usize).min(n_bins - 1);
        pairs[bin].push((truth, s.label()));
    }
    let bins = pairs
        .into_iter()
        .enumerate()
        .map(|(i, p)| ConfidenceBin {
            bin_lo: i as f64 * width,
            bin_hi: (i + 1) as f64 * width,
            count: p.len(),
            rates: error_rates(p),
        })
        .collect();
    Ok(ConfidenceBinReport {
        model: model.to_string(),
        bins,
    })
}

pub fn confidence_bins(model: &TrainedModel, docs: &[Prepared], n_bins: usize) -> Result<ConfidenceBinReport> {
    if !model.continuous_output() {
        return Err(Error::NoContinuousOutput(model.id()));
    }
    let scored: Vec<(Label, ScorePair)> = docs.iter().map(|d| d.label).zip(score_all(model, docs)?).collect();
    bin_scores(&model.id(), &scored, n_bins)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub wall_seconds: f64,
    pub docs_per_hour: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub seed: u64,
    pub repeats: usize,
    /// What the timings cover.
    pub measured: String,
    pub rows: Vec<BenchRow>,
}

pub const BENCH_BOUNDARY: &str =
    "ensemble vote_batch only: cleaning, tokenization, vectorization and all model votes; excludes corpus loading and model deserialization";

impl BenchReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Least-squares line through `(n, wall_seconds)`: `(slope, intercept, r^2)`.
    pub fn linear_fit(&self) -> (f64, f64, f64) {
        let pts: Vec<(f64, f64)> = self.rows.iter().map(|r| (r.n as f64, r.wall_seconds)).collect();
        linear_fit(&pts)
    }
}

pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

/// Median wall time of `vote_batch` over `repeats` runs for each size, each
/// run on a fresh seeded random subset of `docs`.
pub fn bench(e: &Ensemble, docs: &[Document], sizes: &[usize], repeats: usize, seed: u64) -> Result<BenchReport> {
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    if sizes.is_empty() || sizes.windows(2).any(|w| w[0] >= w[1]) || sizes[0] == 0 {
        return Err(Error::InvalidArgument("bench sizes must be positive and strictly ascending".into()));
    }
    if let Some(&too_big) = sizes.iter().find(|&&s| s > docs.len()) {
        return Err(Error::InvalidArgument(format!(
            "bench size {too_big} exceeds the {} available documents",
            docs.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let mut times = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let subset: Vec<Document> = docs.choose_multiple(&mut rng, n).cloned().collect();
            let start = Instant::now();
            let verdicts = e.vote_batch(&subset);
            let elapsed = start.elapsed().as_secs_f64();
            debug_assert_eq!(verdicts.len(), n);
            std::hint::black_box(verdicts);
            times.push(elapsed.max(f64::MIN_POSITIVE));
        }
        let wall_seconds = median(times);
        rows.push(BenchRow {
            n,
            wall_seconds,
            docs_per_hour: n as f64 / wall_seconds * 3600.0,
        });
    }
    Ok(BenchReport {
        seed,
        repeats,
        measured: BENCH_BOUNDARY.to_string(),
        rows,
    })
}
