//! Network definition, quantizer utilities and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod network;
pub mod quantizer;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{parse_kv, ModelConfig, Preset};
pub use network::{Batch, Forward, FrozenQuantizer, Model};
pub use quantizer::{
    nearest_code, nearest_neighbor_distances, perplexity, perplexity_of_indices, quantize_rows, usage_histogram,
    TokenGrid,
};
