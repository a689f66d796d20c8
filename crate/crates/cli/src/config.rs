//! `key = value` run configuration files.
//!
//! ```text
//! # comments and blank lines are ignored
//! dictionary = data/words.txt
//! corpus.reddit = data/reddit.jsonl
//! min_tokens = 10
//! split = 1/2
//! seed = 7
//! families = logistic,mlp,dnn-0.95
//! out_dir = runs/today
//! bins = 20
//! bench_sizes = 1000,2000,4000,8000
//! bench_repeats = 3
//! n_values = 1,5,10,20,40
//! hidden = 1000,100
//! ```
//!
//! Command-line flags override the file; the file overrides `CTC_SEED` and
//! built-in defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ctc_core::corpus::Fraction;
use ctc_core::{ModelConfig, Source};

use crate::CliError;

pub const KEYS: &[&str] = &[
    "dictionary",
    "min_tokens",
    "split",
    "seed",
    "families",
    "out_dir",
    "bins",
    "bench_sizes",
    "bench_repeats",
    "n_values",
    "hidden",
];

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
    corpora: Vec<(Source, PathBuf)>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|m| CliError::Usage(format!("{}: {m}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cfg = ConfigFile::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(source) = key.strip_prefix("corpus.") {
                cfg.corpora.push((source.parse().unwrap(), PathBuf::from(value)));
            } else if KEYS.contains(&key) {
                cfg.values.insert(key.to_string(), value.to_string());
            } else {
                return Err(format!("line {}: unknown key {key:?}", i + 1));
            }
        }
        Ok(cfg)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn corpora(&self) -> &[(Source, PathBuf)] {
        &self.corpora
    }
}

/// Parses a comma-separated list.
pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| format!("{p:?}: {e}")))
        .collect()
}

/// Resolves one setting: flag, then config file, then default.
pub fn resolve<T: FromStr>(flag: Option<T>, file: &ConfigFile, key: &str, default: T) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    if let Some(v) = flag {
        return Ok(v);
    }
    match file.get(key) {
        Some(raw) => raw
            .parse()
            .map_err(|e| CliError::Usage(format!("config key {key}: {raw:?}: {e}"))),
        None => Ok(default),
    }
}

pub fn resolve_list<T: FromStr>(flag: Option<Vec<T>>, file: &ConfigFile, key: &str, default: Vec<T>) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    if let Some(v) = flag {
        return Ok(v);
    }
    match file.get(key) {
        Some(raw) => parse_list(raw).map_err(|e| CliError::Usage(format!("config key {key}: {e}"))),
        None => Ok(default),
    }
}

pub const DEFAULT_SEED: u64 = 42;

/// Flag, then config file, then `CTC_SEED`, then the built-in default.
pub fn resolve_seed(flag: Option<u64>, file: &ConfigFile) -> Result<u64, CliError> {
    let env = match std::env::var("CTC_SEED") {
        Ok(v) => Some(
            v.trim()
                .parse::<u64>()
                .map_err(|e| CliError::Usage(format!("CTC_SEED={v:?}: {e}")))?,
        ),
        Err(_) => None,
    };
    if flag.is_none() && file.get("seed").is_none() {
        return Ok(env.unwrap_or(DEFAULT_SEED));
    }
    resolve(flag, file, "seed", DEFAULT_SEED)
}

pub fn resolve_split(flag: Option<Fraction>, file: &ConfigFile) -> Result<Fraction, CliError> {
    resolve(flag, file, "split", Fraction::HALF)
}

/// Families to run, with optional hidden-width override for networks.
pub fn resolve_families(
    flag: Option<Vec<ModelConfig>>,
    hidden: Option<Vec<usize>>,
    file: &ConfigFile,
) -> Result<Vec<ModelConfig>, CliError> {
    let families = resolve_list(flag, file, "families", ModelConfig::canonical())?;
    let hidden = resolve_list(hidden, file, "hidden", Vec::new())?;
    Ok(if hidden.is_empty() {
        families
    } else {
        families.into_iter().map(|c| c.with_hidden(&hidden)).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_corpora() {
        let cfg = ConfigFile::parse("# run\n\ndictionary = words.txt\ncorpus.arxiv = a.jsonl\nseed=9\n").unwrap();
        assert_eq!(cfg.get("dictionary"), Some("words.txt"));
        assert_eq!(cfg.corpora(), &[(Source::Arxiv, PathBuf::from("a.jsonl"))]);
        assert_eq!(resolve::<u64>(None, &cfg, "seed", 0).unwrap(), 9);
        assert_eq!(resolve(Some(3u64), &cfg, "seed", 0).unwrap(), 3);
        assert!(ConfigFile::parse("bogus = 1").is_err());
        assert!(ConfigFile::parse("no equals sign").is_err());
    }

    #[test]
    fn lists_and_families() {
        assert_eq!(parse_list::<usize>("1, 2,3,").unwrap(), vec![1, 2, 3]);
        assert!(parse_list::<usize>("1,x").is_err());
        let cfg = ConfigFile::parse("families = logistic,dnn-0.99\nhidden = 8,4").unwrap();
        let fams = resolve_families(None, None, &cfg).unwrap();
        assert_eq!(fams.len(), 2);
        match &fams[1] {
            ModelConfig::Dnn(p) => assert_eq!(p.hidden, vec![8, 4]),
            other => panic!("{other:?}"),
        }
    }
}
