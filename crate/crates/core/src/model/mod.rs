//! Toy-scale 3D encoder–decoder regressing signed distance volumes.
//!
//! Each level runs two same-padded 3×3×3 convolutions with ReLU. Descents
//! are 2×2×2 max pools; ascents are stride-2 transposed convolutions followed
//! by concatenation with the matching encoder output. A linear 1×1×1 head
//! produces one unbounded channel. There are no normalization layers.

mod checkpoint;
mod infer;
mod layout;
mod network;
mod ops;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use infer::{infer, predict_sdt, segment_sdt, Segmentation};
pub use network::{backward, forward, forward_trace, NetworkParams, Trace};
pub use train::{prepare_pair, train, Adam, EpochRecord, TrainConfig, TrainState, TrainingPair};

/// Deepest supported level count; the input must be divisible by `2^depth`.
pub const MAX_DEPTH: usize = 6;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    /// Number of pooling steps between the input and the bottleneck.
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_start_channels")]
    pub start_channels: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_depth() -> usize {
    2
}

fn default_start_channels() -> usize {
    4
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { depth: default_depth(), start_channels: default_start_channels(), seed: 0 }
    }
}

impl NetConfig {
    pub fn new(depth: usize, start_channels: usize, seed: u64) -> Result<Self> {
        let cfg = NetConfig { depth, start_channels, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_DEPTH).contains(&self.depth) {
            return Err(Error::InvalidParameter(format!(
                "depth must lie in 1..={MAX_DEPTH}, got {}",
                self.depth
            )));
        }
        if !(1..=1024).contains(&self.start_channels) {
            return Err(Error::InvalidParameter(format!(
                "start_channels must lie in 1..=1024, got {}",
                self.start_channels
            )));
        }
        Ok(())
    }

    /// Channel count at `level`; level `depth` is the bottleneck.
    pub fn channels(&self, level: usize) -> usize {
        self.start_channels << level
    }

    pub fn parameter_count(&self) -> usize {
        layout::Layout::new(self).len
    }
}
