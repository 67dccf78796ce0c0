//! Resolved run configurations.
//!
//! Each command first builds its configuration from the command-line flags,
//! then deep-merges the matching `[section]` of the `--config` file over it,
//! so file values win. The result is written next to the outputs as
//! `config.toml`, which can be fed back through `--config` to repeat the
//! run.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use protoprior::data::{Partition, SynthConfig};
use protoprior::hog::HogConfig;
use protoprior::net::HeadKind;
use protoprior::presets::Preset;
use protoprior::zeroshot::ConseBackbone;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

pub const DESK_PRESET: &str = include_str!("../presets/desk.toml");
pub const PAPER_REF_PRESET: &str = include_str!("../presets/paper-ref.toml");

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    protoprior::Error::InvalidConfig(msg.into()).into()
}

/// Parses one of the shipped preset files.
pub fn preset(name: &str) -> anyhow::Result<Preset> {
    let text = match name {
        "desk" => DESK_PRESET,
        "paper-ref" => PAPER_REF_PRESET,
        other => return Err(invalid(format!("unknown preset `{other}` (expected desk or paper-ref)"))),
    };
    let preset: Preset = toml::from_str(text).with_context(|| format!("preset {name}"))?;
    Ok(preset)
}

pub fn parse_partition(value: &str) -> anyhow::Result<Partition> {
    value
        .parse()
        .map_err(|v| invalid(format!("unknown partition `{v}` (expected train, val or test)")))
}

/// The `--config` file, if any.
#[derive(Debug, Default)]
pub struct FileOverrides {
    table: Table,
}

impl FileOverrides {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(FileOverrides::default());
        };
        if !path.is_file() {
            return Err(protoprior::Error::MissingFile(path.to_path_buf()).into());
        }
        let text = fs::read_to_string(path)?;
        let table: Table = text.parse().with_context(|| format!("config file {}", path.display()))?;
        for key in table.keys() {
            if !matches!(key.as_str(), "seed" | "out" | "command" | "synth" | "hog" | "train" | "eval" | "zeroshot") {
                return Err(invalid(format!("unknown top-level key `{key}` in {}", path.display())));
            }
        }
        Ok(FileOverrides { table })
    }

    pub fn seed(&self, flag: u64) -> anyhow::Result<u64> {
        match self.table.get("seed") {
            None => Ok(flag),
            Some(Value::Integer(v)) if *v >= 0 => Ok(*v as u64),
            Some(other) => Err(invalid(format!("seed must be a non-negative integer, got {other}"))),
        }
    }

    pub fn out(&self, flag: Option<&Path>) -> anyhow::Result<Option<PathBuf>> {
        match self.table.get("out") {
            None => Ok(flag.map(Path::to_path_buf)),
            Some(Value::String(s)) => Ok(Some(PathBuf::from(s))),
            Some(other) => Err(invalid(format!("out must be a string, got {other}"))),
        }
    }

    /// `from_flags` with the file's `[section]` merged over it.
    pub fn resolve<T: Serialize + DeserializeOwned>(&self, section: &str, from_flags: T) -> anyhow::Result<T> {
        let Some(over) = self.table.get(section) else {
            return Ok(from_flags);
        };
        let mut value = Value::try_from(&from_flags)?;
        merge(&mut value, over.clone());
        value
            .try_into()
            .with_context(|| format!("[{section}] section of the config file"))
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(existing) => merge(existing, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// The `config.toml` written next to every run's outputs.
pub fn resolved_document<T: Serialize>(command: &str, seed: u64, section: &T) -> anyhow::Result<String> {
    let mut table = Table::new();
    table.insert("command".into(), Value::String(command.into()));
    table.insert(
        "seed".into(),
        Value::Integer(i64::try_from(seed).map_err(|_| invalid("seed must fit in a signed 64-bit integer"))?),
    );
    table.insert(command.into(), Value::try_from(section)?);
    Ok(toml::to_string_pretty(&table)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HogRun {
    pub image: Option<PathBuf>,
    pub dims_only: bool,
    pub hog: HogConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRun {
    pub data: PathBuf,
    pub prototypes: PathBuf,
    pub head: HeadKind,
    pub checkpoint_every_epoch: bool,
    pub preset: Preset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRun {
    pub data: PathBuf,
    pub checkpoint: PathBuf,
    pub prototypes: Option<PathBuf>,
    pub partition: Partition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZeroshotRun {
    pub data: PathBuf,
    pub prototypes: PathBuf,
    pub trials: usize,
    pub unseen: usize,
    pub conse_top_t: Option<usize>,
    pub conse_backbone: ConseBackbone,
    pub resamples: usize,
    pub partition: Partition,
    pub curve: bool,
    pub preset: Preset,
}

pub type SynthRun = SynthConfig;
