//! Signed-distance-transform segmentation toolkit: SDT targets, the
//! exponential-decay weighted loss, STAPLE fusion, morphology, surface
//! metrics, a toy encoder–decoder and synthetic phantoms.

pub mod config;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod morphology;
pub mod phantom;
pub mod sdt;
pub mod staple;
pub mod volume;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use loss::{sdt_loss, sdt_weights, LossConfig, LossReport, WeightSource};
pub use metrics::{assd, dice, evaluate, hd95, MetricsReport};
pub use model::{Checkpoint, NetConfig, NetworkParams, Segmentation, TrainConfig, TrainState};
pub use morphology::{fill_holes, largest_component, Connectivity};
pub use phantom::{corrupt_rater, generate, PhantomSpec, Primitive};
pub use sdt::{boundary_voxels, edt_squared, signed_distance, threshold_to_mask, SdtVolume};
pub use staple::{staple_fuse, Prior, RaterStack, StapleOptions, StapleResult};
pub use volume::{Geometry, Mask, Orientation, ValueKind, Volume};
