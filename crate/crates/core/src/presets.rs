//! Named architecture + HOG + schedule bundles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hog::HogConfig;
use crate::net::{Architecture, EmbeddingInit, LayerSpec, Nonlinearity, Schedule, Shape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub architecture: Architecture,
    pub hog: HogConfig,
    pub schedule: Schedule,
}

fn conv(out_maps: usize, kernel_side: usize) -> LayerSpec {
    LayerSpec::Convolution {
        out_maps,
        kernel_side,
    }
}

fn relu() -> LayerSpec {
    LayerSpec::Activation {
        function: Nonlinearity::Relu,
    }
}

fn pool() -> LayerSpec {
    LayerSpec::MaxPool { window: 2 }
}

/// conv(m1,7) pool conv(m2,4) pool conv(m3,4) pool fc(h) dropout fc(k),
/// ReLU after every conv and the hidden fc; the final fc is the embedding.
fn tower(channels: usize, maps: [usize; 3], hidden: usize, dropout: f64, k: usize, embedding_init: EmbeddingInit) -> Architecture {
    Architecture {
        input: Shape::new(channels, 48, 48),
        embedding_init,
        layers: vec![
            conv(maps[0], 7),
            relu(),
            pool(),
            conv(maps[1], 4),
            relu(),
            pool(),
            conv(maps[2], 4),
            relu(),
            pool(),
            LayerSpec::FullyConnected { out_dim: hidden },
            relu(),
            LayerSpec::Dropout { rate: dropout },
            LayerSpec::FullyConnected { out_dim: k },
        ],
    }
}

impl Preset {
    /// 100/150/250 maps, 300 hidden units, 3888-d HOG embedding on 48x48 RGB.
    pub fn paper_ref() -> Preset {
        let hog = HogConfig::default();
        Preset {
            name: "paper-ref".into(),
            architecture: tower(3, [100, 150, 250], 300, 0.5, hog.dimension().expect("valid"), EmbeddingInit::FanIn),
            hog,
            schedule: Schedule {
                epochs: 30,
                batch_size: 32,
                ..Schedule::default()
            },
        }
    }

    /// Shrunk widths (8/16/32, 64 hidden) and a 60x60 HOG (1200-d) on 48x48
    /// grayscale with a zero-initialised embedding layer; trains in minutes
    /// on one core.
    pub fn desk() -> Preset {
        let hog = HogConfig::default().with_side(60);
        Preset {
            name: "desk".into(),
            architecture: tower(1, [8, 16, 32], 64, 0.5, hog.dimension().expect("valid"), EmbeddingInit::Zero),
            hog,
            schedule: Schedule {
                epochs: 20,
                batch_size: 16,
                ..Schedule::default()
            },
        }
    }

    pub fn by_name(name: &str) -> Result<Preset> {
        match name {
            "desk" => Ok(Preset::desk()),
            "paper-ref" => Ok(Preset::paper_ref()),
            other => Err(Error::InvalidConfig(format!(
                "unknown preset `{other}` (expected desk or paper-ref)"
            ))),
        }
    }

    /// Checks the layer chain and that the embedding width equals the HOG
    /// dimension.
    pub fn validate(&self) -> Result<()> {
        let k = self.hog.dimension()?;
        let width = self.architecture.embedding_dim()?;
        if width != k {
            return Err(Error::DimensionMismatch { expected: k, got: width });
        }
        Ok(())
    }
}
