//! Datasets: in-memory representation, the synthetic glyph benchmark, and
//! the on-disk directory + manifest format.

mod io;
mod synth;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use io::{load_directory, load_prototypes, read_image, save_dataset, save_prototypes, LoadOptions, MANIFEST_FILE, PROTOTYPE_MANIFEST_FILE};
pub use synth::{build_synthetic, corrupt, generate_templates, render_glyph, Corruption, SynthConfig};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::net::Example;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Partition {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Partition::Train),
            "val" | "validation" => Ok(Partition::Val),
            "test" => Ok(Partition::Test),
            other => Err(other.to_string()),
        }
    }
}

/// An image and the index of its class in [`Dataset::class_ids`].
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    Synthetic { config: SynthConfig },
    Directory { root: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub class_ids: Vec<String>,
    pub samples: Vec<Sample>,
    /// Partition of every sample, parallel to `samples`.
    pub partitions: Vec<Partition>,
    pub provenance: Provenance,
}

impl Dataset {
    /// Checks the labels and partition vector.
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if self.partitions.len() != self.samples.len() {
            return Err(Error::DimensionMismatch {
                expected: self.samples.len(),
                got: self.partitions.len(),
            });
        }
        if let Some(s) = self.samples.iter().find(|s| s.label >= self.class_ids.len()) {
            return Err(Error::InvalidConfig(format!(
                "label {} outside {} classes",
                s.label,
                self.class_ids.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn indices(&self, partition: Partition) -> Vec<usize> {
        self.partitions
            .iter()
            .enumerate()
            .filter(|(_, p)| **p == partition)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn class_id(&self, label: usize) -> &str {
        &self.class_ids[label]
    }

    /// Samples of `partition` whose class is in `classes`, with targets
    /// re-indexed into `classes`.
    pub fn examples(&self, partition: Partition, classes: &[String]) -> Result<Vec<Example<'_>>> {
        let lookup: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        if let Some(c) = classes.iter().find(|c| !self.class_ids.contains(c)) {
            return Err(Error::UnknownClass(c.clone()));
        }
        Ok(self
            .samples
            .iter()
            .zip(&self.partitions)
            .filter(|(_, p)| **p == partition)
            .filter_map(|(s, _)| {
                lookup.get(self.class_ids[s.label].as_str()).map(|&target| Example {
                    image: &s.image,
                    target,
                })
            })
            .collect())
    }

    /// Per-class sample counts in `partition`, in class order.
    pub fn counts(&self, partition: Partition) -> Vec<usize> {
        let mut counts = vec![0; self.class_ids.len()];
        for (s, p) in self.samples.iter().zip(&self.partitions) {
            if *p == partition {
                counts[s.label] += 1;
            }
        }
        counts
    }
}

/// SplitMix64 finalizer; derives independent per-item seeds.
pub fn mix_seed(master: u64, a: u64, b: u64) -> u64 {
    let mut z = master
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
