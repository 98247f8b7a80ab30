//! Encoders, generators and patch discriminators.

mod blocks;
pub mod checkpoint;
mod model;
pub mod ops;

pub use model::{
    ContentEncoder, ContentFeature, DiscKind, NetConfig, PlainAutoencoder, Stack, StyleFeature, TransferNet,
    DOWNSAMPLE, MODEL_VERSION,
};
