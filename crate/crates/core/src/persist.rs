//! Binary containers for trained models and the vectorizer, plus the
//! `ensemble.json` manifest tying 21 models to one dictionary.
//!
//! Container layout, all integers little-endian:
//!
//! ```text
//! "CTCM" | version: u32 = 1 | header_len: u64 | header (UTF-8 JSON) | payload
//! ```
//!
//! The header's block table gives each array's byte `offset` (relative to
//! the payload start), byte `length` and `dtype` (`f32`, `i32`, `u32`). The
//! blocks must tile the payload exactly, and `payload_sha256` must match.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Source;
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::models::nn::Layer;
use crate::models::tree::Node;
use crate::models::{LinearModel, ModelConfig, Network, Params, TrainedModel, Tree};
use crate::textprep::Dictionary;
use crate::vectorizer::{Featurizer, TfIdfModel};

pub const MAGIC: [u8; 4] = *b"CTCM";
pub const VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "ensemble.json";
const PREAMBLE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    I32,
    U32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub offset: u64,
    pub length: u64,
    pub dtype: Dtype,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Meta {
    Model {
        config: ModelConfig,
        source: Source,
        training_accuracy: f64,
        epochs: Option<usize>,
        dim: usize,
        /// Input-to-output widths, for networks.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        widths: Option<Vec<usize>>,
    },
    Vectorizer {
        dim: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    #[serde(flatten)]
    meta: Meta,
    payload_sha256: String,
    blocks: Vec<Block>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

enum Data {
    F32(Vec<f32>),
    I32(Vec<i32>),
    U32(Vec<u32>),
}

#[derive(Default)]
struct PayloadWriter {
    blocks: Vec<Block>,
    payload: Vec<u8>,
}

impl PayloadWriter {
    fn push(&mut self, name: impl Into<String>, data: Data) {
        let offset = self.payload.len() as u64;
        let dtype = match &data {
            Data::F32(v) => {
                v.iter().for_each(|x| self.payload.extend_from_slice(&x.to_le_bytes()));
                Dtype::F32
            }
            Data::I32(v) => {
                v.iter().for_each(|x| self.payload.extend_from_slice(&x.to_le_bytes()));
                Dtype::I32
            }
            Data::U32(v) => {
                v.iter().for_each(|x| self.payload.extend_from_slice(&x.to_le_bytes()));
                Dtype::U32
            }
        };
        self.blocks.push(Block {
            name: name.into(),
            offset,
            length: self.payload.len() as u64 - offset,
            dtype,
        });
    }

    fn finish(self, meta: Meta) -> Result<Vec<u8>> {
        let header = Header {
            meta,
            payload_sha256: sha256_hex(&self.payload),
            blocks: self.blocks,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(PREAMBLE + json.len() + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&self.payload);
        Ok(out)
    }
}

/// A parsed, validated container.
struct Container<'a> {
    header: Header,
    payload: &'a [u8],
}

impl<'a> Container<'a> {
    fn parse(bytes: &'a [u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated(format!("{} bytes, shorter than the magic", bytes.len())));
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        if bytes.len() < PREAMBLE {
            return Err(Error::Truncated("incomplete preamble".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let rest = (bytes.len() - PREAMBLE) as u64;
        if header_len > rest {
            return Err(Error::Truncated(format!(
                "header needs {header_len} bytes, only {rest} present"
            )));
        }
        let header_end = PREAMBLE + header_len as usize;
        let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end])
            .map_err(|e| Error::Integrity(format!("unreadable header: {e}")))?;
        let payload = &bytes[header_end..];

        let mut blocks: Vec<&Block> = header.blocks.iter().collect();
        blocks.sort_by_key(|b| (b.offset, b.length));
        let mut cursor = 0u64;
        for b in &blocks {
            if b.offset != cursor {
                return Err(Error::Integrity(format!(
                    "block {:?} at offset {} {} the previous block ending at {cursor}",
                    b.name,
                    b.offset,
                    if b.offset < cursor { "overlaps" } else { "leaves a gap after" }
                )));
            }
            if b.length % 4 != 0 {
                return Err(Error::Integrity(format!("block {:?} length {} is not a multiple of 4", b.name, b.length)));
            }
            cursor = b
                .offset
                .checked_add(b.length)
                .ok_or_else(|| Error::Integrity(format!("block {:?} extent overflows", b.name)))?;
        }
        let have = payload.len() as u64;
        if cursor > have {
            return Err(Error::Truncated(format!("payload has {have} bytes, block table needs {cursor}")));
        }
        if cursor < have {
            return Err(Error::Integrity(format!(
                "{} trailing payload bytes not covered by any block",
                have - cursor
            )));
        }
        let actual = sha256_hex(payload);
        if actual != header.payload_sha256 {
            return Err(Error::Integrity(format!(
                "payload hash {actual} does not match header {}",
                header.payload_sha256
            )));
        }
        Ok(Container { header, payload })
    }

    fn block(&self, name: &str, dtype: Dtype) -> Result<&'a [u8]> {
        let b = self
            .header
            .blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::Integrity(format!("missing block {name:?}")))?;
        if b.dtype != dtype {
            return Err(Error::Integrity(format!("block {name:?} has dtype {:?}, expected {dtype:?}", b.dtype)));
        }
        Ok(&self.payload[b.offset as usize..(b.offset + b.length) as usize])
    }

    fn f32s(&self, name: &str) -> Result<Vec<f32>> {
        Ok(words(self.block(name, Dtype::F32)?).map(f32::from_le_bytes).collect())
    }

    fn i32s(&self, name: &str) -> Result<Vec<i32>> {
        Ok(words(self.block(name, Dtype::I32)?).map(i32::from_le_bytes).collect())
    }

    fn u32s(&self, name: &str) -> Result<Vec<u32>> {
        Ok(words(self.block(name, Dtype::U32)?).map(u32::from_le_bytes).collect())
    }
}

fn words(bytes: &[u8]) -> impl Iterator<Item = [u8; 4]> + '_ {
    bytes.chunks_exact(4).map(|c| c.try_into().unwrap())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn push_trees(w: &mut PayloadWriter, trees: &[Tree]) {
    let nodes: Vec<&Node> = trees.iter().flat_map(|t| t.nodes()).collect();
    let mut roots = Vec::with_capacity(trees.len());
    let mut start = 0u32;
    for t in trees {
        roots.push(start);
        start += t.nodes().len() as u32;
    }
    w.push("node_feature", Data::U32(nodes.iter().map(|n| n.feature).collect()));
    w.push("node_threshold", Data::F32(nodes.iter().map(|n| n.threshold).collect()));
    w.push("node_left", Data::I32(nodes.iter().map(|n| n.left).collect()));
    w.push("node_right", Data::I32(nodes.iter().map(|n| n.right).collect()));
    w.push("node_value", Data::F32(nodes.iter().flat_map(|n| n.value).collect()));
    w.push("tree_roots", Data::U32(roots));
}

/// Node arrays use tree-local child indices; `tree_roots` holds each tree's
/// first node.
fn read_trees(c: &Container, dim: usize) -> Result<Vec<Tree>> {
    let feature = c.u32s("node_feature")?;
    let threshold = c.f32s("node_threshold")?;
    let left = c.i32s("node_left")?;
    let right = c.i32s("node_right")?;
    let value = c.f32s("node_value")?;
    let roots = c.u32s("tree_roots")?;
    let n = feature.len();
    if threshold.len() != n || left.len() != n || right.len() != n || value.len() != 2 * n {
        return Err(Error::Integrity("tree node arrays differ in length".into()));
    }
    if roots.first() != Some(&0) || roots.windows(2).any(|w| w[0] >= w[1]) || *roots.last().unwrap() as usize >= n {
        return Err(Error::Integrity("tree roots must start at 0 and increase within the node arrays".into()));
    }
    if let Some(f) = feature.iter().zip(&left).find(|(f, l)| **l != -1 && **f as usize >= dim) {
        return Err(Error::Integrity(format!("split feature {} out of range for dimension {dim}", f.0)));
    }
    let mut trees = Vec::with_capacity(roots.len());
    for (k, &r) in roots.iter().enumerate() {
        let end = roots.get(k + 1).map_or(n, |&e| e as usize);
        let nodes = (r as usize..end)
            .map(|i| Node {
                feature: feature[i],
                threshold: threshold[i],
                left: left[i],
                right: right[i],
                value: [value[2 * i], value[2 * i + 1]],
            })
            .collect();
        trees.push(Tree::from_nodes(nodes).map_err(|e| Error::Integrity(format!("tree {k}: {e}")))?);
    }
    Ok(trees)
}

pub fn model_to_bytes(m: &TrainedModel) -> Result<Vec<u8>> {
    let mut w = PayloadWriter::default();
    let mut widths = None;
    match &m.params {
        Params::Tree(t) => push_trees(&mut w, std::slice::from_ref(t)),
        Params::Forest(ts) => push_trees(&mut w, ts),
        Params::Linear(l) => {
            w.push("coef", Data::F32(l.coef.clone()));
            w.push("intercept", Data::F32(vec![l.intercept]));
        }
        Params::Network(net) => {
            for (i, l) in net.layers().iter().enumerate() {
                w.push(format!("layer{i}.weight"), Data::F32(l.weight.iter().copied().collect()));
                w.push(format!("layer{i}.bias"), Data::F32(l.bias.to_vec()));
            }
            widths = Some(net.widths());
        }
    }
    w.finish(Meta::Model {
        config: m.config.clone(),
        source: m.source.clone(),
        training_accuracy: m.training_accuracy,
        epochs: m.epochs,
        dim: m.dim,
        widths,
    })
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<TrainedModel> {
    let c = Container::parse(bytes)?;
    let Meta::Model {
        config,
        source,
        training_accuracy,
        epochs,
        dim,
        widths,
    } = c.header.meta.clone()
    else {
        return Err(Error::Integrity("container holds a vectorizer, not a model".into()));
    };
    let params = match &config {
        ModelConfig::DecisionTree(_) => {
            let mut trees = read_trees(&c, dim)?;
            if trees.len() != 1 {
                return Err(Error::Integrity(format!("decision tree container holds {} trees", trees.len())));
            }
            Params::Tree(trees.pop().unwrap())
        }
        ModelConfig::RandomForest(_) => Params::Forest(read_trees(&c, dim)?),
        ModelConfig::Logistic(_) | ModelConfig::LinearSvm(_) => {
            let coef = c.f32s("coef")?;
            let intercept = c.f32s("intercept")?;
            if coef.len() != dim || intercept.len() != 1 {
                return Err(Error::Integrity("linear model block sizes do not match its dimension".into()));
            }
            Params::Linear(LinearModel {
                coef,
                intercept: intercept[0],
            })
        }
        ModelConfig::Mlp(_) | ModelConfig::Dnn(_) => {
            let widths = widths.ok_or_else(|| Error::Integrity("network header lacks widths".into()))?;
            if widths.len() < 2 || widths[0] != dim {
                return Err(Error::Integrity("network widths do not start at the model dimension".into()));
            }
            let mut layers = Vec::with_capacity(widths.len() - 1);
            for (i, w) in widths.windows(2).enumerate() {
                let weight = Array2::from_shape_vec((w[0], w[1]), c.f32s(&format!("layer{i}.weight"))?)
                    .map_err(|e| Error::Integrity(format!("layer{i}.weight: {e}")))?;
                let bias = Array1::from(c.f32s(&format!("layer{i}.bias"))?);
                layers.push(Layer { weight, bias });
            }
            Params::Network(Network::from_layers(layers)?)
        }
    };
    Ok(TrainedModel {
        config,
        params,
        dim,
        training_accuracy,
        source,
        epochs,
    })
}

pub fn save_model(m: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &model_to_bytes(m)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    model_from_bytes(&read(path.as_ref())?)
}

pub fn vectorizer_to_bytes(t: &TfIdfModel) -> Result<Vec<u8>> {
    let mut w = PayloadWriter::default();
    w.push("idf", Data::F32(t.idf().to_vec()));
    w.finish(Meta::Vectorizer { dim: t.dim() })
}

pub fn vectorizer_from_bytes(bytes: &[u8]) -> Result<TfIdfModel> {
    let c = Container::parse(bytes)?;
    let Meta::Vectorizer { dim } = c.header.meta else {
        return Err(Error::Integrity("container holds a model, not a vectorizer".into()));
    };
    let idf = c.f32s("idf")?;
    if idf.len() != dim {
        return Err(Error::Integrity(format!("idf has {} entries, header says {dim}", idf.len())));
    }
    TfIdfModel::from_idf(idf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRef {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub id: String,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub version: u32,
    pub dictionary: FileRef,
    pub vectorizer: FileRef,
    pub models: Vec<ModelEntry>,
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes the dictionary, vectorizer, every model and `ensemble.json` into
/// `dir`, returning the manifest path.
pub fn save_ensemble(e: &Ensemble, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|err| Error::io(dir, err))?;
    let dict_bytes = e.featurizer().dictionary().to_text().into_bytes();
    write(&dir.join("dictionary.txt"), &dict_bytes)?;
    let vec_bytes = vectorizer_to_bytes(e.featurizer().tfidf())?;
    write(&dir.join("vectorizer.ctcm"), &vec_bytes)?;

    let mut models = Vec::with_capacity(e.len());
    let mut taken: BTreeMap<String, usize> = BTreeMap::new();
    for m in e.models() {
        let id = m.id();
        let n = taken.entry(id.clone()).or_default();
        let file = if *n == 0 {
            format!("{}.ctcm", sanitize(&id))
        } else {
            format!("{}-{n}.ctcm", sanitize(&id))
        };
        *n += 1;
        let bytes = model_to_bytes(m)?;
        write(&dir.join(&file), &bytes)?;
        models.push(ModelEntry {
            id,
            file,
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = EnsembleManifest {
        version: VERSION,
        dictionary: FileRef {
            file: "dictionary.txt".into(),
            sha256: sha256_hex(&dict_bytes),
        },
        vectorizer: FileRef {
            file: "vectorizer.ctcm".into(),
            sha256: sha256_hex(&vec_bytes),
        },
        models,
    };
    let path = dir.join(MANIFEST_NAME);
    write(&path, &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(path)
}

fn read_checked(base: &Path, file: &str, expected: &str) -> Result<Vec<u8>> {
    let path = base.join(file);
    let bytes = read(&path)?;
    let actual = sha256_hex(&bytes);
    if !actual.eq_ignore_ascii_case(expected) {
        return Err(Error::HashMismatch {
            path,
            expected: expected.to_string(),
            actual,
        });
    }
    Ok(bytes)
}

/// Loads an ensemble from its manifest, verifying every file's hash.
pub fn load_ensemble(manifest_path: impl AsRef<Path>) -> Result<Ensemble> {
    let manifest_path = manifest_path.as_ref();
    let manifest: EnsembleManifest = serde_json::from_slice(&read(manifest_path)?)
        .map_err(|e| Error::Integrity(format!("{}: {e}", manifest_path.display())))?;
    if manifest.version != VERSION {
        return Err(Error::UnsupportedVersion(manifest.version));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let dict_bytes = read_checked(base, &manifest.dictionary.file, &manifest.dictionary.sha256)?;
    let dict_text = String::from_utf8(dict_bytes)
        .map_err(|_| Error::Integrity(format!("{} is not UTF-8", manifest.dictionary.file)))?;
    let dictionary = Dictionary::parse(&dict_text)?;
    let tfidf = vectorizer_from_bytes(&read_checked(base, &manifest.vectorizer.file, &manifest.vectorizer.sha256)?)?;
    let featurizer = Featurizer::with_model(dictionary, tfidf)?;
    let mut models = Vec::with_capacity(manifest.models.len());
    for entry in &manifest.models {
        let bytes = read_checked(base, &entry.file, &entry.sha256)?;
        models.push(model_from_bytes(&bytes).map_err(|e| match e {
            Error::Integrity(m) => Error::Integrity(format!("{}: {m}", entry.file)),
            other => other,
        })?);
    }
    Ensemble::new(featurizer, models)
}
