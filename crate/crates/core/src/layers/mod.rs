//! Temporal layers and skip-connection blocks.

pub mod arch;
pub mod channels;
pub mod conv;
pub mod delay;
pub mod encoder;
pub mod pool;

pub use arch::{
    make_architecture, ArchKind, ConvSpec, DelaySpec, EncoderSpec, LayerSpec, ModelConfig,
};
pub use channels::{channel_shuffle, channel_split, concat_channels};
pub use conv::{temporal_conv2d, temporal_dense, ConvGeom};
pub use delay::{add_skip, delay_apply, DelayParams, Granularity};
pub use encoder::{encode_input, EncoderGeom, EncoderParams};
pub use pool::min_time_pool;
