//! Checkpoint files.
//!
//! ```text
//! protoprior-checkpoint 1\n
//! {single-line JSON header}\n
//! raw little-endian f32 tensors, in header order
//! ```
//!
//! The header records the architecture, head kind, class list, HOG config
//! (prototype heads) and the name and length of every tensor. Output is a
//! pure function of the network's parameters.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hog::HogConfig;
use crate::net::{Architecture, Head, HeadKind, Layer, Network};
use crate::proto::PrototypeSet;

pub const MAGIC: &str = "protoprior-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub architecture: Architecture,
    pub head: HeadKind,
    pub class_ids: Vec<String>,
    pub hog_config: Option<HogConfig>,
    pub source_refs: Option<Vec<String>>,
    pub tensors: Vec<TensorEntry>,
}

fn tensors(net: &Network<f32>) -> Vec<(String, &[f32])> {
    let mut out = Vec::new();
    for (i, layer) in net.layers().iter().enumerate() {
        if layer.has_params() {
            out.push((format!("layer{i}.weights"), layer.weights.as_slice()));
            out.push((format!("layer{i}.bias"), layer.bias.as_slice()));
        }
    }
    match net.head() {
        Head::Learned { weights, bias, .. } => {
            out.push(("head.weights".into(), weights.as_slice()));
            out.push(("head.bias".into(), bias.as_slice()));
        }
        Head::Prototype { set, .. } => out.push(("head.prototypes".into(), set.matrix())),
    }
    out
}

pub fn to_bytes(net: &Network<f32>) -> Result<Vec<u8>> {
    let tensors = tensors(net);
    let prototypes = net.head().prototypes();
    let header = Header {
        format_version: FORMAT_VERSION,
        architecture: net.architecture().clone(),
        head: net.head().kind(),
        class_ids: net.class_ids().to_vec(),
        hog_config: prototypes.map(|p| *p.hog_config()),
        source_refs: prototypes.map(|p| p.source_refs().to_vec()),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                len: t.len(),
            })
            .collect(),
    };
    let mut out = Vec::new();
    writeln!(out, "{MAGIC} {FORMAT_VERSION}")?;
    serde_json::to_writer(&mut out, &header)?;
    out.push(b'\n');
    for (_, t) in &tensors {
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network<f32>> {
    let bad = |msg: &str| Error::Checkpoint(msg.to_string());
    let first_nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing magic line"))?;
    let magic = std::str::from_utf8(&bytes[..first_nl]).map_err(|_| bad("magic line is not utf-8"))?;
    if magic != format!("{MAGIC} {FORMAT_VERSION}") {
        return Err(bad(&format!("unsupported magic line `{magic}`")));
    }
    let rest = &bytes[first_nl + 1..];
    let header_len = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header"))?;
    let header: Header = serde_json::from_slice(&rest[..header_len])?;
    let mut payload = &rest[header_len + 1..];

    let mut read_tensor = |name: &str, len: usize| -> Result<Vec<f32>> {
        let entry = header
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| bad(&format!("missing tensor {name}")))?;
        if entry.len != len {
            return Err(bad(&format!("tensor {name} has {} values, expected {len}", entry.len)));
        }
        if payload.len() < len * 4 {
            return Err(bad("truncated tensor data"));
        }
        let (head, tail) = payload.split_at(len * 4);
        payload = tail;
        Ok(head
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    };

    let mut layers = Vec::with_capacity(header.architecture.layers.len());
    let mut shape = header.architecture.input;
    for (i, spec) in header.architecture.layers.iter().enumerate() {
        let mut layer = Layer::<f32>::new(spec.clone(), shape)?;
        if layer.has_params() {
            layer.weights = read_tensor(&format!("layer{i}.weights"), layer.weights.len())?;
            layer.bias = read_tensor(&format!("layer{i}.bias"), layer.bias.len())?;
        }
        shape = layer.output;
        layers.push(layer);
    }
    let k = shape.len();
    let c = header.class_ids.len();
    let head = match header.head {
        HeadKind::Learned => Head::Learned {
            weights: read_tensor("head.weights", c * k)?,
            bias: read_tensor("head.bias", c)?,
            class_ids: header.class_ids.clone(),
        },
        HeadKind::Prototype => {
            let matrix = read_tensor("head.prototypes", c * k)?;
            let config = header.hog_config.ok_or_else(|| bad("prototype head without hog_config"))?;
            let mut set = PrototypeSet::from_matrix(header.class_ids.clone(), k, matrix, config)?;
            if let Some(sources) = header.source_refs.clone() {
                set = set.with_sources(sources)?;
            }
            Head::prototype(set)
        }
    };
    if !payload.is_empty() {
        return Err(bad("trailing bytes after tensors"));
    }
    Ok(Network::from_parts(header.architecture, layers, head))
}

/// Writes atomically (temporary file, then rename).
pub fn save(net: &Network<f32>, path: &Path) -> Result<()> {
    write_atomic(path, &to_bytes(net)?)
}

pub fn load(path: &Path) -> Result<Network<f32>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    from_bytes(&fs::read(path)?)
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
