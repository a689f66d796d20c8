//! Text cleaning and fixed-dictionary tokenization.
//!
//! A "usable token" is a word that survives [`clean`] and appears in the
//! [`Dictionary`]. Every token count in the crate (length filters, histograms,
//! verdict metadata) goes through [`usable_tokens`].

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Ordered, deduplicated list of lowercase alphabetic words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dictionary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Dictionary {
    /// Builds a dictionary from words, lowercasing and dropping repeats while
    /// keeping first-occurrence order.
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut dict = Dictionary {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for (i, word) in words.into_iter().enumerate() {
            let word = word.as_ref();
            if word.is_empty() || !word.chars().all(|c| c.is_ascii_alphabetic()) {
                return Err(Error::InvalidWord {
                    line: i + 1,
                    word: word.to_string(),
                });
            }
            dict.insert(word.to_ascii_lowercase());
        }
        if dict.words.is_empty() {
            return Err(Error::EmptyDictionary);
        }
        Ok(dict)
    }

    /// Reads a word list, one word per line. Blank lines are skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut dict = Dictionary {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for (i, line) in text.lines().enumerate() {
            let word = line.trim();
            if word.is_empty() {
                continue;
            }
            if !word.chars().all(|c| c.is_ascii_alphabetic()) {
                return Err(Error::InvalidWord {
                    line: i + 1,
                    word: word.to_string(),
                });
            }
            dict.insert(word.to_ascii_lowercase());
        }
        if dict.words.is_empty() {
            return Err(Error::EmptyDictionary);
        }
        Ok(dict)
    }

    fn insert(&mut self, word: String) {
        if !self.index.contains_key(&word) {
            self.index.insert(word.clone(), self.words.len() as u32);
            self.words.push(word);
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn position(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn word(&self, position: u32) -> Option<&str> {
        self.words.get(position as usize).map(String::as_str)
    }

    /// Canonical serialized form: one word per line, LF terminated.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.words.iter().map(|w| w.len() + 1).sum());
        for w in &self.words {
            out.push_str(w);
            out.push('\n');
        }
        out
    }
}

/// Cleaned document text: no URLs, tags, non-ASCII bytes or repeated
/// whitespace, and no leading or trailing whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CleanText(String);

impl CleanText {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl AsRef<str> for CleanText {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for CleanText {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

const URL_PREFIXES: [&str; 3] = ["http://", "https://", "www."];

/// Cleans raw text: URL removal, tag removal, non-ASCII removal, whitespace
/// collapse, trim.
///
/// A removal can splice together a new URL or tag (`h<b>ttp://x`), so the
/// passes repeat until the text stops changing. Every pass that changes the
/// text shortens it, so this terminates.
pub fn clean(raw: &str) -> CleanText {
    let mut current = clean_pass(raw);
    loop {
        let next = clean_pass(&current);
        if next == current {
            return CleanText(current);
        }
        current = next;
    }
}

fn clean_pass(raw: &str) -> String {
    let s = strip_urls(raw);
    let s = strip_tags(&s);
    let s: String = s.chars().filter(char::is_ascii).collect();
    collapse_whitespace(&s)
}

/// Removes every run starting with a URL prefix (case-insensitive) up to the
/// next whitespace.
fn strip_urls(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = String::with_capacity(s.len());
    let mut i = 0;
    let mut copied_to = 0;
    while i < bytes.len() {
        if starts_with_url(&bytes[i..]) {
            out.push_str(&s[copied_to..i]);
            let end = s[i..]
                .char_indices()
                .find(|(_, c)| c.is_whitespace())
                .map_or(s.len(), |(off, _)| i + off);
            i = end;
            copied_to = end;
        } else {
            i += 1;
            while i < bytes.len() && !s.is_char_boundary(i) {
                i += 1;
            }
        }
    }
    out.push_str(&s[copied_to..]);
    out
}

fn starts_with_url(bytes: &[u8]) -> bool {
    URL_PREFIXES
        .iter()
        .any(|p| bytes.len() >= p.len() && bytes[..p.len()].eq_ignore_ascii_case(p.as_bytes()))
}

/// Removes substrings of the form `<...>` whose interior has no `<` or `>`.
fn strip_tags(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(open) = rest.find('<') {
        let after = &rest[open + 1..];
        match after.find(['<', '>']) {
            Some(close) if after.as_bytes()[close] == b'>' => {
                out.push_str(&rest[..open]);
                rest = &after[close + 1..];
            }
            _ => {
                out.push_str(&rest[..open + 1]);
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn collapse_whitespace(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split(char::is_whitespace).filter(|w| !w.is_empty()) {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Dictionary positions of the usable tokens of a text, in order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenStream(Vec<u32>);

impl TokenStream {
    pub fn new(tokens: Vec<u32>) -> Self {
        TokenStream(tokens)
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Splits on every non-alphabetic character, lowercases and keeps dictionary
/// words.
pub fn tokenize(text: &CleanText, dict: &Dictionary) -> TokenStream {
    let mut buf = String::new();
    let tokens = text
        .as_str()
        .split(|c: char| !c.is_ascii_alphabetic())
        .filter(|w| !w.is_empty())
        .filter_map(|w| {
            buf.clear();
            buf.extend(w.chars().map(|c| c.to_ascii_lowercase()));
            dict.position(&buf)
        })
        .collect();
    TokenStream(tokens)
}

/// `tokenize(clean(raw))`.
pub fn usable_tokens(raw: &str, dict: &Dictionary) -> TokenStream {
    tokenize(&clean(raw), dict)
}
