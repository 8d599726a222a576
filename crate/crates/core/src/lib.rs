//! Time-to-first-spike spiking neural networks with closed-form spike times,
//! skip connections and learnable delays.

// `!(x > 0.0)` is used on purpose so NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod engine;
pub mod error;
pub mod io;
pub mod layers;
pub mod metrics;
pub mod par;
pub mod temporal;
pub mod tensor;
pub mod training;
pub mod wave;

pub use data::Dataset;
pub use error::{Error, Result};
pub use par::Exec;
pub use tensor::{Shape3, TimeTensor};
