//! Seeded synthetic corpora for tests, demos and the acceptance suite.
//!
//! Each class draws its topic words from its own vocabulary; a shared pool
//! of noise words is mixed in at a fixed rate. Sources are simulated by
//! sliding each class's 50-word window along a slightly larger word pool, so
//! different sources share most but not all of their topic vocabulary.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Label, Source};
use crate::textprep::Dictionary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub docs_per_class: usize,
    /// Topic words per class and source.
    pub topic_words: usize,
    /// Window offset between consecutive sources.
    pub source_shift: usize,
    pub noise_words: usize,
    /// Probability that a token is a shared noise word.
    pub noise_fraction: f64,
    /// Probability that a topic token comes from the other class.
    pub crossover: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a document carries a URL or an HTML tag.
    pub markup_rate: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            docs_per_class: 2000,
            topic_words: 50,
            source_shift: 10,
            noise_words: 100,
            noise_fraction: 0.2,
            crossover: 0.0,
            min_len: 10,
            max_len: 40,
            markup_rate: 0.05,
        }
    }
}

pub const SOURCES: [Source; 3] = [Source::Reddit, Source::StackExchange, Source::Arxiv];

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// A pronounceable, purely alphabetic word unique to `(tag, i)`.
fn pseudo_word(tag: &str, mut i: usize) -> String {
    let base = CONSONANTS.len() * VOWELS.len();
    let mut w = String::from(tag);
    loop {
        let s = i % base;
        w.push(CONSONANTS[s / VOWELS.len()] as char);
        w.push(VOWELS[s % VOWELS.len()] as char);
        i /= base;
        if i == 0 {
            break;
        }
    }
    w
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    /// Per class (noncyber, cyber), the full word pool spanning all sources.
    pub topics: [Vec<String>; 2],
    pub noise: Vec<String>,
}

impl Vocabulary {
    pub fn new(cfg: &SyntheticConfig, n_sources: usize) -> Self {
        let pool = cfg.topic_words + cfg.source_shift * n_sources.saturating_sub(1);
        Vocabulary {
            topics: [
                (0..pool).map(|i| pseudo_word("no", i)).collect(),
                (0..pool).map(|i| pseudo_word("cy", i)).collect(),
            ],
            noise: (0..cfg.noise_words).map(|i| pseudo_word("zu", i)).collect(),
        }
    }

    pub fn dictionary(&self) -> Dictionary {
        let words = self.topics[0].iter().chain(&self.topics[1]).chain(&self.noise);
        Dictionary::from_words(words).expect("synthetic vocabulary is valid")
    }

    fn window(&self, label: Label, source_index: usize, cfg: &SyntheticConfig) -> &[String] {
        let start = source_index * cfg.source_shift;
        &self.topics[label.index()][start..start + cfg.topic_words]
    }
}

/// Adds a URL before, or wraps in a tag, the word at `at`. Neither changes
/// the usable token count.
fn add_markup(rng: &mut ChaCha8Rng, words: &mut Vec<String>, at: usize) {
    if rng.gen_bool(0.5) {
        let url = format!("https://www.example.com/{}?id={}", words[at], rng.gen_range(0..1000));
        words.insert(at, url);
    } else {
        words[at] = format!("<b>{}</b>", words[at]);
    }
}

/// `cfg.docs_per_class` documents of each class for one simulated source,
/// in shuffled order.
pub fn generate(cfg: &SyntheticConfig, vocab: &Vocabulary, source_index: usize, seed: u64) -> Vec<Document> {
    let source = SOURCES
        .get(source_index)
        .cloned()
        .unwrap_or_else(|| Source::Other(format!("synthetic{source_index}")));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (source_index as u64).wrapping_mul(0xA24B_AED4_963E_E407));
    let mut docs = Vec::with_capacity(2 * cfg.docs_per_class);
    for label in [Label::Cyber, Label::Noncyber] {
        let own = vocab.window(label, source_index, cfg);
        let other = vocab.window(
            if label == Label::Cyber { Label::Noncyber } else { Label::Cyber },
            source_index,
            cfg,
        );
        for i in 0..cfg.docs_per_class {
            let len = rng.gen_range(cfg.min_len..=cfg.max_len);
            let mut words: Vec<String> = (0..len)
                .map(|_| {
                    let pool = if rng.gen_bool(cfg.noise_fraction) {
                        &vocab.noise[..]
                    } else if rng.gen_bool(cfg.crossover) {
                        other
                    } else {
                        own
                    };
                    pool.choose(&mut rng).unwrap().clone()
                })
                .collect();
            if rng.gen_bool(cfg.markup_rate) {
                let at = rng.gen_range(0..words.len());
                add_markup(&mut rng, &mut words, at);
            }
            let split = words.len().min(3);
            docs.push(Document {
                id: format!("{source}-{}-{i}", label.as_str()),
                source: source.clone(),
                label: Some(label),
                title: words[..split].join(" "),
                body: words[split..].join(" "),
            });
        }
    }
    docs.shuffle(&mut rng);
    docs
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub dictionary: Dictionary,
    pub sources: Vec<(Source, Vec<Document>)>,
}

pub fn corpus(cfg: &SyntheticConfig, n_sources: usize, seed: u64) -> SyntheticCorpus {
    let vocab = Vocabulary::new(cfg, n_sources);
    let sources = (0..n_sources)
        .map(|s| {
            let docs = generate(cfg, &vocab, s, seed);
            (docs[0].source.clone(), docs)
        })
        .collect();
    SyntheticCorpus {
        dictionary: vocab.dictionary(),
        sources,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textprep::usable_tokens;
    use std::collections::HashSet;

    #[test]
    fn words_are_unique_and_alphabetic() {
        let words: Vec<String> = (0..5000).map(|i| pseudo_word("cy", i)).collect();
        assert!(words.iter().all(|w| w.bytes().all(|b| b.is_ascii_lowercase())));
        assert_eq!(words.iter().collect::<HashSet<_>>().len(), words.len());
    }

    #[test]
    fn corpus_shape() {
        let cfg = SyntheticConfig {
            docs_per_class: 50,
            ..SyntheticConfig::default()
        };
        let c = corpus(&cfg, 3, 7);
        assert_eq!(c.sources.len(), 3);
        assert_eq!(c.dictionary.len(), 2 * 70 + 100);
        for (source, docs) in &c.sources {
            assert_eq!(docs.len(), 100);
            assert_eq!(docs.iter().filter(|d| d.label == Some(Label::Cyber)).count(), 50);
            assert!(docs.iter().all(|d| &d.source == source));
            for d in docs {
                let n = usable_tokens(&d.text(), &c.dictionary).len();
                assert!((cfg.min_len..=cfg.max_len).contains(&n), "{n} tokens in {:?}", d.text());
            }
        }
        // Deterministic per seed.
        assert_eq!(corpus(&cfg, 3, 7).sources[1].1, c.sources[1].1);
    }

    #[test]
    fn sources_shift_vocabulary() {
        let cfg = SyntheticConfig::default();
        let v = Vocabulary::new(&cfg, 3);
        let a: HashSet<_> = v.window(Label::Cyber, 0, &cfg).iter().collect();
        let b: HashSet<_> = v.window(Label::Cyber, 2, &cfg).iter().collect();
        assert_eq!(a.intersection(&b).count(), 30);
        let n: HashSet<_> = v.window(Label::Noncyber, 0, &cfg).iter().collect();
        assert!(a.is_disjoint(&n));
    }
}
