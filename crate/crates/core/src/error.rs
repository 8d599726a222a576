use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of a mathematical operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller broke an API contract (mismatched lengths, missing tape, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid architecture or layer configuration.
    #[error("config error{}: {msg}", .layer.map(|l| format!(" at layer {l}")).unwrap_or_default())]
    Config { layer: Option<usize>, msg: String },

    /// Config file that does not match the documented schema.
    #[error("schema error at {pointer}: {msg}")]
    Schema { pointer: String, msg: String },

    #[error("numeric error at node {node}: {msg}")]
    Numeric { node: usize, msg: String },

    #[error("parse error at byte offset {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config {
            layer: None,
            msg: msg.into(),
        }
    }

    pub fn config_at(layer: usize, msg: impl Into<String>) -> Self {
        Error::Config {
            layer: Some(layer),
            msg: msg.into(),
        }
    }
}
