//! Labeled document corpora: JSONL ingestion, token-length filtering,
//! deterministic splits and class weighting.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::textprep::{usable_tokens, Dictionary};

/// Where a document (or a model's training data) came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Reddit,
    StackExchange,
    Arxiv,
    Other(String),
}

impl Source {
    pub fn as_str(&self) -> &str {
        match self {
            Source::Reddit => "reddit",
            Source::StackExchange => "stackexchange",
            Source::Arxiv => "arxiv",
            Source::Other(name) => name,
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "reddit" => Source::Reddit,
            "stackexchange" => Source::StackExchange,
            "arxiv" => Source::Arxiv,
            _ => Source::Other(s.to_string()),
        })
    }
}

impl Serialize for Source {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Source {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.parse().unwrap_or_else(|never| match never {}))
    }
}

/// Binary topic label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Noncyber,
    Cyber,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Cyber => "cyber",
            Label::Noncyber => "noncyber",
        }
    }

    /// Class index: 0 for noncyber, 1 for cyber.
    pub fn index(self) -> usize {
        match self {
            Label::Noncyber => 0,
            Label::Cyber => 1,
        }
    }

    pub fn from_index(i: usize) -> Label {
        if i == 1 {
            Label::Cyber
        } else {
            Label::Noncyber
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cyber" => Ok(Label::Cyber),
            "noncyber" => Ok(Label::Noncyber),
            other => Err(Error::InvalidArgument(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default)]
    pub title: String,
    pub body: String,
}

impl Document {
    /// Title and body joined as `"title. body"`; just the body when the title
    /// is empty.
    pub fn text(&self) -> String {
        if self.title.is_empty() {
            self.body.clone()
        } else {
            format!("{}. {}", self.title, self.body)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_cyber: usize,
    pub n_noncyber: usize,
    pub per_source: BTreeMap<String, usize>,
    /// `token_histogram[k]` is the number of documents with exactly `k`
    /// usable tokens. Empty until filled by [`CorpusStats::with_token_histogram`].
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub token_histogram: Vec<usize>,
}

impl CorpusStats {
    pub fn from_documents(docs: &[Document]) -> Self {
        let mut stats = CorpusStats::default();
        for doc in docs {
            match doc.label {
                Some(Label::Cyber) => stats.n_cyber += 1,
                Some(Label::Noncyber) => stats.n_noncyber += 1,
                None => continue,
            }
            *stats.per_source.entry(doc.source.to_string()).or_default() += 1;
        }
        stats
    }

    /// Fills the usable-token histogram over the labeled documents.
    pub fn with_token_histogram(mut self, docs: &[Document], dict: &Dictionary) -> Self {
        let mut hist = Vec::new();
        for doc in docs.iter().filter(|d| d.label.is_some()) {
            let n = usable_tokens(&doc.text(), dict).len();
            if hist.len() <= n {
                hist.resize(n + 1, 0);
            }
            hist[n] += 1;
        }
        self.token_histogram = hist;
        self
    }

    pub fn labeled(&self) -> usize {
        self.n_cyber + self.n_noncyber
    }
}

#[derive(Deserialize)]
struct RawDocument {
    id: String,
    source: Source,
    #[serde(default)]
    label: Option<Label>,
    #[serde(default)]
    title: Option<String>,
    body: String,
}

/// Reads a JSONL corpus, one document per line, in file order.
pub fn ingest(path: impl AsRef<Path>, require_labels: bool) -> Result<(Vec<Document>, CorpusStats)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDocument = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            path: path.to_path_buf(),
            line: lineno,
            message: e.to_string(),
        })?;
        if raw.id.is_empty() {
            return Err(Error::MalformedLine {
                path: path.to_path_buf(),
                line: lineno,
                message: "empty document id".into(),
            });
        }
        if !seen.insert(raw.id.clone()) {
            return Err(Error::DuplicateId {
                id: raw.id,
                line: lineno,
            });
        }
        if require_labels && raw.label.is_none() {
            return Err(Error::MissingLabel {
                id: raw.id,
                line: lineno,
            });
        }
        docs.push(Document {
            id: raw.id,
            source: raw.source,
            label: raw.label,
            title: raw.title.unwrap_or_default(),
            body: raw.body,
        });
    }
    let stats = CorpusStats::from_documents(&docs);
    Ok((docs, stats))
}

/// Serializes documents as JSONL.
pub fn write_jsonl<W: std::io::Write>(mut out: W, docs: &[Document]) -> Result<()> {
    for doc in docs {
        serde_json::to_writer(&mut out, doc)?;
        out.write_all(b"\n")
            .map_err(|e| Error::io("<output>", e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub min_tokens: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { min_tokens: 10 }
    }
}

/// Keeps the documents with at least `cfg.min_tokens` usable tokens, in
/// order. A minimum below 1 is treated as 1.
pub fn filter_by_token_length(docs: &[Document], dict: &Dictionary, cfg: FilterConfig) -> Vec<Document> {
    let min = cfg.min_tokens.max(1);
    docs.iter()
        .filter(|d| usable_tokens(&d.text(), dict).len() >= min)
        .cloned()
        .collect()
}

/// A rational number in (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraction {
    pub num: u64,
    pub den: u64,
}

impl Fraction {
    pub const HALF: Fraction = Fraction { num: 1, den: 2 };
    pub const THREE_EIGHTHS: Fraction = Fraction { num: 3, den: 8 };

    pub fn new(num: u64, den: u64) -> Result<Self> {
        if den == 0 || num == 0 || num >= den {
            return Err(Error::InvalidArgument(format!(
                "fraction {num}/{den} is not in (0, 1)"
            )));
        }
        Ok(Fraction { num, den })
    }

    /// `round(self * n)`, halves rounded up.
    pub fn of(self, n: usize) -> usize {
        let n = n as u128;
        ((2 * self.num as u128 * n + self.den as u128) / (2 * self.den as u128)) as usize
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Fraction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("cannot parse fraction {s:?}; expected e.g. 1/2"));
        let (n, d) = s.split_once('/').ok_or_else(bad)?;
        Fraction::new(n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: Fraction,
    pub seed: u64,
    pub stratified: bool,
}

impl SplitSpec {
    pub fn new(train_fraction: Fraction, seed: u64) -> Self {
        SplitSpec {
            train_fraction,
            seed,
            stratified: true,
        }
    }
}

/// Splits labeled items into (train, validation) by seeded shuffle.
///
/// The training side gets `round(fraction * n)` items. When stratified, that
/// total is apportioned between the classes by largest remainder, so each
/// class lands within one item of its exact share.
pub fn split_by<T: Clone>(items: &[T], label_of: impl Fn(&T) -> Option<Label>, spec: SplitSpec) -> Result<(Vec<T>, Vec<T>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, item) in items.iter().enumerate() {
        let label = label_of(item).ok_or_else(|| {
            Error::InvalidArgument("split requires every document to be labeled".into())
        })?;
        by_class[label.index()].push(i);
    }
    let total_train = spec.train_fraction.of(items.len());

    let mut in_train = vec![false; items.len()];
    if spec.stratified {
        let (nnc, nc) = (by_class[0].len(), by_class[1].len());
        if nc < 2 || nnc < 2 {
            return Err(Error::TooFewPerClass {
                cyber: nc,
                noncyber: nnc,
            });
        }
        let f = spec.train_fraction;
        // Exact share num*n_k/den: floor plus remainder (in units of 1/den).
        let mut quota: Vec<(usize, u128)> = by_class
            .iter()
            .map(|idx| {
                let exact = f.num as u128 * idx.len() as u128;
                ((exact / f.den as u128) as usize, exact % f.den as u128)
            })
            .collect();
        let mut leftover = total_train - quota.iter().map(|q| q.0).sum::<usize>();
        // Cyber first on equal remainders.
        let mut order = [1usize, 0];
        order.sort_by(|&a, &b| quota[b].1.cmp(&quota[a].1));
        for k in order {
            if leftover > 0 && quota[k].1 > 0 {
                quota[k].0 += 1;
                leftover -= 1;
            }
        }
        for (class, idx) in by_class.iter_mut().enumerate() {
            idx.shuffle(&mut rng);
            for &i in idx.iter().take(quota[class].0) {
                in_train[i] = true;
            }
        }
    } else {
        let mut idx: Vec<usize> = (0..items.len()).collect();
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(total_train) {
            in_train[i] = true;
        }
    }

    let mut train = Vec::with_capacity(total_train);
    let mut validation = Vec::with_capacity(items.len() - total_train);
    for (item, &t) in items.iter().zip(&in_train) {
        if t {
            train.push(item.clone());
        } else {
            validation.push(item.clone());
        }
    }
    Ok((train, validation))
}

pub fn split(docs: &[Document], spec: SplitSpec) -> Result<(Vec<Document>, Vec<Document>)> {
    split_by(docs, |d| d.label, spec)
}

/// Class counts and the loss multipliers derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassBalance {
    pub n_c: usize,
    pub n_nc: usize,
    pub weight_noncyber: f64,
    pub weight_cyber: f64,
}

impl ClassBalance {
    /// Noncyber weight 1, cyber weight `n_nc / n_c`.
    pub fn from_counts(n_c: usize, n_nc: usize) -> Result<Self> {
        if n_c == 0 || n_nc == 0 {
            return Err(Error::SingleClass {
                cyber: n_c,
                noncyber: n_nc,
            });
        }
        Ok(ClassBalance {
            n_c,
            n_nc,
            weight_noncyber: 1.0,
            weight_cyber: n_nc as f64 / n_c as f64,
        })
    }

    pub fn from_labels(labels: impl IntoIterator<Item = Label>) -> Result<Self> {
        let (mut c, mut nc) = (0, 0);
        for l in labels {
            match l {
                Label::Cyber => c += 1,
                Label::Noncyber => nc += 1,
            }
        }
        Self::from_counts(c, nc)
    }

    /// Unit weights for both classes.
    pub fn uniform(n_c: usize, n_nc: usize) -> Self {
        ClassBalance {
            n_c,
            n_nc,
            weight_noncyber: 1.0,
            weight_cyber: 1.0,
        }
    }

    pub fn weight(&self, label: Label) -> f64 {
        match label {
            Label::Cyber => self.weight_cyber,
            Label::Noncyber => self.weight_noncyber,
        }
    }
}

pub fn class_balance(docs: &[Document]) -> Result<ClassBalance> {
    ClassBalance::from_labels(docs.iter().filter_map(|d| d.label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn doc(id: usize, label: Label) -> Document {
        Document {
            id: format!("d{id}"),
            source: Source::Reddit,
            label: Some(label),
            title: String::new(),
            body: format!("body {id}"),
        }
    }

    fn corpus(nc: usize, nnc: usize) -> Vec<Document> {
        (0..nc)
            .map(|i| doc(i, Label::Cyber))
            .chain((nc..nc + nnc).map(|i| doc(i, Label::Noncyber)))
            .collect()
    }

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn ingest_counts_labels() {
        let mut text = String::new();
        for (i, l) in ["cyber", "cyber", "noncyber", "noncyber", "noncyber"].iter().enumerate() {
            text += &format!("{{\"id\":\"{i}\",\"source\":\"reddit\",\"label\":\"{l}\",\"body\":\"x\"}}\n");
        }
        let f = write_tmp(&text);
        let (docs, stats) = ingest(f.path(), true).unwrap();
        assert_eq!(docs.len(), 5);
        assert_eq!((stats.n_cyber, stats.n_noncyber), (2, 3));
        assert_eq!(stats.per_source["reddit"], 5);
    }

    #[test]
    fn ingest_joins_title_and_body() {
        let f = write_tmp("{\"id\":\"a\",\"source\":\"arxiv\",\"title\":\"A\",\"body\":\"B\",\"extra\":1}\n");
        let (docs, _) = ingest(f.path(), false).unwrap();
        assert_eq!(docs[0].text(), "A. B");
        assert_eq!(docs[0].label, None);
    }

    #[test]
    fn ingest_empty_file() {
        let f = write_tmp("");
        let (docs, stats) = ingest(f.path(), true).unwrap();
        assert!(docs.is_empty());
        assert_eq!(stats, CorpusStats::default());
    }

    #[test]
    fn ingest_errors() {
        let f = write_tmp("{\"id\":\"a\",\"source\":\"x\",\"body\":\"\"}\nnot json\n");
        match ingest(f.path(), false) {
            Err(Error::MalformedLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let f = write_tmp("{\"id\":\"a\",\"source\":\"x\",\"body\":\"\"}\n{\"id\":\"a\",\"source\":\"x\",\"body\":\"\"}\n");
        assert!(matches!(ingest(f.path(), false), Err(Error::DuplicateId { line: 2, .. })));
        let f = write_tmp("{\"id\":\"a\",\"source\":\"x\",\"body\":\"\"}\n");
        assert!(matches!(ingest(f.path(), true), Err(Error::MissingLabel { line: 1, .. })));
        let f = write_tmp("{\"id\":\"a\",\"source\":\"x\",\"label\":\"spam\",\"body\":\"\"}\n");
        assert!(matches!(ingest(f.path(), false), Err(Error::MalformedLine { line: 1, .. })));
    }

    #[test]
    fn source_names_round_trip() {
        for s in ["reddit", "stackexchange", "arxiv", "agnews"] {
            assert_eq!(s.parse::<Source>().unwrap().to_string(), s);
        }
        assert_eq!("Reddit".parse::<Source>().unwrap(), Source::Reddit);
    }

    #[test]
    fn filter_boundaries() {
        let dict = Dictionary::from_words(["w"]).unwrap();
        let mk = |n: usize| Document {
            id: n.to_string(),
            source: Source::Reddit,
            label: Some(Label::Cyber),
            title: String::new(),
            body: vec!["w"; n].join(" "),
        };
        let docs = vec![mk(9), mk(10), mk(0)];
        let kept = filter_by_token_length(&docs, &dict, FilterConfig { min_tokens: 10 });
        assert_eq!(kept.iter().map(|d| d.id.as_str()).collect::<Vec<_>>(), ["10"]);
        let kept = filter_by_token_length(&docs, &dict, FilterConfig { min_tokens: 1 });
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn stratified_half_split() {
        let docs = corpus(40, 60);
        let (train, val) = split(&docs, SplitSpec::new(Fraction::HALF, 7)).unwrap();
        let c = train.iter().filter(|d| d.label == Some(Label::Cyber)).count();
        assert_eq!((c, train.len() - c), (20, 30));
        assert_eq!(val.len(), 50);
    }

    #[test]
    fn three_eighths_of_eight() {
        let docs = corpus(4, 4);
        let (train, val) = split(&docs, SplitSpec::new(Fraction::THREE_EIGHTHS, 1)).unwrap();
        assert_eq!((train.len(), val.len()), (3, 5));
        let mut spec = SplitSpec::new(Fraction::THREE_EIGHTHS, 1);
        spec.stratified = false;
        assert_eq!(split(&docs, spec).unwrap().0.len(), 3);
    }

    #[test]
    fn split_rejects_tiny_classes() {
        let docs = corpus(1, 10);
        assert!(matches!(
            split(&docs, SplitSpec::new(Fraction::HALF, 0)),
            Err(Error::TooFewPerClass { cyber: 1, noncyber: 10 })
        ));
    }

    #[test]
    fn class_balance_examples() {
        let b = ClassBalance::from_counts(164_750, 4_184_184).unwrap();
        // 4184184 / 164750 = 25.397171471927162...
        assert!((b.weight_cyber - 25.397_171_471_927_16).abs() < 1e-12);
        assert_eq!(b.weight_noncyber, 1.0);
        assert_eq!(ClassBalance::from_counts(50, 50).unwrap().weight_cyber, 1.0);
        assert_eq!(ClassBalance::from_counts(1, 3).unwrap().weight_cyber, 3.0);
        assert!(ClassBalance::from_counts(0, 3).is_err());
        assert!(ClassBalance::from_counts(3, 0).is_err());
    }

    #[test]
    fn fraction_parsing() {
        assert_eq!("3/8".parse::<Fraction>().unwrap(), Fraction::THREE_EIGHTHS);
        assert!("1/1".parse::<Fraction>().is_err());
        assert!("0/4".parse::<Fraction>().is_err());
        assert!("half".parse::<Fraction>().is_err());
        assert_eq!(Fraction::HALF.of(5), 3);
    }

    proptest! {
        #[test]
        fn split_partitions(nc in 2usize..40, nnc in 2usize..40, num in 1u64..7, seed: u64, stratified: bool) {
            let docs = corpus(nc, nnc);
            let frac = Fraction::new(num, 8).unwrap();
            let spec = SplitSpec { train_fraction: frac, seed, stratified };
            let (train, val) = split(&docs, spec).unwrap();
            prop_assert_eq!(train.len(), frac.of(docs.len()));
            let mut ids: Vec<_> = train.iter().chain(&val).map(|d| d.id.clone()).collect();
            ids.sort();
            let mut all: Vec<_> = docs.iter().map(|d| d.id.clone()).collect();
            all.sort();
            prop_assert_eq!(ids, all);
            if stratified {
                let tc = train.iter().filter(|d| d.label == Some(Label::Cyber)).count() as f64;
                prop_assert!((tc - frac.as_f64() * nc as f64).abs() <= 1.0);
                let tn = train.len() as f64 - tc;
                prop_assert!((tn - frac.as_f64() * nnc as f64).abs() <= 1.0);
            }
            let again = split(&docs, spec).unwrap();
            prop_assert_eq!(again.0, train);
        }

        #[test]
        fn weight_times_count_recovers_noncyber(nc in 1usize..5_000_000, nnc in 1usize..5_000_000) {
            let b = ClassBalance::from_counts(nc, nnc).unwrap();
            let back = b.weight_cyber * nc as f64;
            let ulp = f64::EPSILON * (nnc as f64);
            prop_assert!((back - nnc as f64).abs() <= ulp);
        }

        #[test]
        fn filter_is_monotone(lens in proptest::collection::vec(0usize..20, 0..30), n in 1usize..15) {
            let dict = Dictionary::from_words(["w"]).unwrap();
            let docs: Vec<_> = lens.iter().enumerate().map(|(i, &k)| Document {
                id: i.to_string(), source: Source::Reddit, label: Some(Label::Cyber),
                title: String::new(), body: vec!["w"; k].join(" "),
            }).collect();
            let a = filter_by_token_length(&docs, &dict, FilterConfig { min_tokens: n });
            let b = filter_by_token_length(&docs, &dict, FilterConfig { min_tokens: n + 1 });
            prop_assert!(b.len() <= a.len());
            prop_assert_eq!(filter_by_token_length(&a, &dict, FilterConfig { min_tokens: n }), a.clone());
        }
    }
}
