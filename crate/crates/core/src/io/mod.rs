//! File formats: IDX, the dataset container, checkpoints and run configs.

pub mod checkpoint;
pub mod config;
pub mod container;
pub mod idx;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{load_config, parse_config};
pub use container::{read_dataset, write_dataset};
pub use idx::{read_idx, read_mnist_dir};

use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};

pub const TRAIN_FILE: &str = "train.ttfsds";
pub const TEST_FILE: &str = "test.ttfsds";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Loads `(train, test)` from a directory holding either the container
/// files written by `gen-wave` or the four standard IDX files.
pub fn load_data_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = dir.join(TRAIN_FILE);
    if train.exists() {
        return Ok((read_dataset(&train)?, read_dataset(&dir.join(TEST_FILE))?));
    }
    if dir.join("train-images-idx3-ubyte").exists() {
        return read_mnist_dir(dir);
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("{} has neither {TRAIN_FILE} nor IDX files", dir.display()),
    )))
}
